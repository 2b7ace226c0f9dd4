#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace hflow::detail {

// C2 cubic spline on uniform nodes x_i = i*h, clamped to zero slope at the
// origin (the kernels are even) and natural at the far end.
class UniformSpline {
 public:
  UniformSpline() = default;

  UniformSpline(std::vector<double> values, double spacing)
      : y_(std::move(values)), m_(y_.size(), 0.0), h_(spacing) {
    const std::size_t n = y_.size();
    assert(n >= 3 && h_ > 0.0);
    // Thomas sweep on the tridiagonal system for the second derivatives.
    std::vector<double> diag(n), rhs(n), upper(n, 0.0);
    const double k = 6.0 / (h_ * h_);
    diag[0] = 2.0;
    upper[0] = 1.0;
    rhs[0] = k * (y_[1] - y_[0]);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      diag[i] = 4.0;
      upper[i] = 1.0;
      rhs[i] = k * (y_[i + 1] - 2.0 * y_[i] + y_[i - 1]);
    }
    diag[n - 1] = 1.0;
    rhs[n - 1] = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      const double lower = (i + 1 < n) ? 1.0 : 0.0;
      const double w = lower / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    m_[n - 1] = rhs[n - 1] / diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) m_[i] = (rhs[i] - upper[i] * m_[i + 1]) / diag[i];
  }

  double spacing() const noexcept { return h_; }
  double range() const noexcept { return h_ * static_cast<double>(y_.size() - 1); }
  std::span<const double> nodes() const noexcept { return y_; }
  double second_derivative_at_node(std::size_t i) const { return m_[i]; }

  // Valid for 0 <= x <= range().
  double operator()(double x) const noexcept {
    const double s = x / h_;
    std::size_t i = static_cast<std::size_t>(s);
    if (i + 1 >= y_.size()) i = y_.size() - 2;
    const double b = s - static_cast<double>(i);
    const double a = 1.0 - b;
    return a * y_[i] + b * y_[i + 1] +
           ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * (h_ * h_ / 6.0);
  }

 private:
  std::vector<double> y_;
  std::vector<double> m_;
  double h_ = 1.0;
};

}  // namespace hflow::detail
