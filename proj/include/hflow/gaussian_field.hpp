#pragma once

// Finite-dimensional increments of the Gaussian field with covariance
// min(t, s) * phi(x - y), sampled at arbitrary point sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hflow/covariance.hpp"
#include "hflow/errors.hpp"
#include "hflow/rng.hpp"

namespace hflow {

inline Eigen::MatrixXd gram(const CovarianceSpec& spec, std::span<const double> points) {
  return gram_of(spec, points);
}

struct JitterPolicy {
  std::vector<double> ladder{0.0, 1e-12, 1e-10, 1e-8};
};

struct Factorization {
  Eigen::MatrixXd lower;
  double jitter = 0.0;
};

namespace detail {

// Index of the first non-positive pivot of a plain Cholesky sweep, or n.
inline std::size_t failing_minor(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) return static_cast<std::size_t>(j);
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i)
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
  }
  return static_cast<std::size_t>(n);
}

}  // namespace detail

/// Lower Cholesky factor of G + j I with j the first rung of the ladder that
/// succeeds.
inline Factorization factorize(const Eigen::MatrixXd& g, const JitterPolicy& policy = {}) {
  const Eigen::Index n = g.rows();
  for (double j : policy.ladder) {
    Eigen::LLT<Eigen::MatrixXd> llt(g + j * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) return {llt.matrixL(), j};
  }
  const double last = policy.ladder.empty() ? 0.0 : policy.ladder.back();
  throw FactorizationError("Gram matrix not positive definite after jitter ladder",
                           detail::failing_minor(g + last * Eigen::MatrixXd::Identity(n, n)));
}

enum class FactorMethod { none, markov, cholesky, pivoted_ldlt, jittered_cholesky };

struct FieldOptions {
  JitterPolicy jitter;
  double cache_quantum = 1e-9;
  bool cache = true;
  // Negative pivots above -tolerance * n are clamped in the pivoted route.
  double pivot_tolerance = 1e-10;
};

/// Per-replica sampler. Not shareable between threads; the CovarianceSpec is.
class FieldSampler {
 public:
  explicit FieldSampler(CovarianceSpec spec, FieldOptions options = {})
      : spec_(std::move(spec)), opt_(std::move(options)) {}

  const CovarianceSpec& spec() const noexcept { return spec_; }

  /// out[i] = sqrt(dt) * (L z)[slot of points[i]]; coincident points share a slot.
  void sample_increment(std::span<const double> points, double dt, Stream& stream, std::span<double> out) {
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    if (out.size() != points.size()) throw DomainError("output size mismatch");
    if (points.empty()) return;
    prepare(points);
    const auto m = static_cast<Eigen::Index>(unique_.size());
    z_.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) z_[i] = stream.normal();
    apply_factor();
    const double scale = std::sqrt(dt);
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = scale * y_[static_cast<Eigen::Index>(slot_[i])];
  }

  std::vector<double> sample_increment(std::span<const double> points, double dt, Stream& stream) {
    std::vector<double> out(points.size());
    sample_increment(points, dt, stream, out);
    return out;
  }

  double last_jitter() const noexcept { return jitter_; }
  FactorMethod last_method() const noexcept { return method_; }
  std::size_t factorizations() const noexcept { return factorizations_; }
  std::span<const double> cached_points() const noexcept { return unique_; }

  /// Matrix A over cached_points() with A A^T = G + jitter I.
  Eigen::MatrixXd factor_matrix() const {
    const auto m = static_cast<Eigen::Index>(unique_.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
    switch (method_) {
      case FactorMethod::markov:
        for (Eigen::Index j = 0; j < m; ++j) {
          double v = scale_[static_cast<std::size_t>(j)];
          a(j, j) = v;
          for (Eigen::Index i = j + 1; i < m; ++i) {
            v *= rho_[static_cast<std::size_t>(i)];
            a(i, j) = v;
          }
        }
        return a;
      case FactorMethod::pivoted_ldlt: {
        Eigen::MatrixXd ld = ldlt_.matrixL();
        ld = ld * sqrt_d_.asDiagonal();
        return ldlt_.transpositionsP().transpose() * ld;
      }
      case FactorMethod::cholesky:
      case FactorMethod::jittered_cholesky:
        return llt_.matrixL();
      case FactorMethod::none:
        break;
    }
    return a;
  }

 private:
  void prepare(std::span<const double> points) {
    const std::size_t n = points.size();
    slot_.resize(n);
    bool strictly_sorted = true;
    for (std::size_t i = 1; i < n && strictly_sorted; ++i) strictly_sorted = points[i - 1] < points[i];
    candidate_.clear();
    if (strictly_sorted) {
      candidate_.assign(points.begin(), points.end());
      std::iota(slot_.begin(), slot_.end(), std::size_t{0});
    } else {
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
      for (std::size_t idx : order_) {
        if (candidate_.empty() || points[idx] != candidate_.back()) candidate_.push_back(points[idx]);
        slot_[idx] = candidate_.size() - 1;
      }
    }

    if (opt_.cache && method_ != FactorMethod::none && candidate_.size() == key_.size()) {
      bool same = true;
      for (std::size_t i = 0; i < candidate_.size() && same; ++i) same = quantize(candidate_[i]) == key_[i];
      if (same) return;
    }
    unique_.swap(candidate_);
    key_.resize(unique_.size());
    for (std::size_t i = 0; i < unique_.size(); ++i) key_[i] = quantize(unique_[i]);
    factor();
  }

  std::int64_t quantize(double x) const { return std::llround(x / opt_.cache_quantum); }

  void factor() {
    ++factorizations_;
    const std::size_t m = unique_.size();
    if (spec_.is_markov()) {
      // exp(-beta |x|) is the Ornstein-Uhlenbeck covariance: on sorted points
      // the Cholesky factor is generated by an AR(1) recursion.
      rho_.assign(m, 0.0);
      scale_.assign(m, 1.0);
      for (std::size_t i = 1; i < m; ++i) {
        const double gap = unique_[i] - unique_[i - 1];
        rho_[i] = std::exp(-spec_.beta() * gap);
        scale_[i] = std::sqrt(-std::expm1(-2.0 * spec_.beta() * gap));
      }
      method_ = FactorMethod::markov;
      jitter_ = 0.0;
      return;
    }

    g_ = gram(spec_, unique_);
    if (!prefer_pivoted_) {
      llt_.compute(g_);
      if (llt_.info() == Eigen::Success) {
        method_ = FactorMethod::cholesky;
        jitter_ = 0.0;
        return;
      }
    }
    ldlt_.compute(g_);
    if (ldlt_.info() == Eigen::Success) {
      const Eigen::VectorXd d = ldlt_.vectorD();
      const double floor = -opt_.pivot_tolerance * static_cast<double>(m);
      if (d.minCoeff() >= floor) {
        sqrt_d_ = d.cwiseMax(0.0).cwiseSqrt();
        method_ = FactorMethod::pivoted_ldlt;
        jitter_ = 0.0;
        prefer_pivoted_ = true;
        return;
      }
    }
    prefer_pivoted_ = false;
    const auto n = static_cast<Eigen::Index>(m);
    for (double j : opt_.jitter.ladder) {
      llt_.compute(g_ + j * Eigen::MatrixXd::Identity(n, n));
      if (llt_.info() == Eigen::Success) {
        method_ = j == 0.0 ? FactorMethod::cholesky : FactorMethod::jittered_cholesky;
        jitter_ = j;
        return;
      }
    }
    method_ = FactorMethod::none;
    key_.clear();
    const double last = opt_.jitter.ladder.empty() ? 0.0 : opt_.jitter.ladder.back();
    throw FactorizationError("field Gram matrix not positive definite",
                             detail::failing_minor(g_ + last * Eigen::MatrixXd::Identity(n, n)));
  }

  void apply_factor() {
    const auto m = static_cast<Eigen::Index>(unique_.size());
    y_.resize(m);
    switch (method_) {
      case FactorMethod::markov:
        y_[0] = z_[0];
        for (Eigen::Index i = 1; i < m; ++i)
          y_[i] = rho_[static_cast<std::size_t>(i)] * y_[i - 1] + scale_[static_cast<std::size_t>(i)] * z_[i];
        break;
      case FactorMethod::pivoted_ldlt:
        y_.noalias() = ldlt_.matrixL() * sqrt_d_.cwiseProduct(z_);
        y_ = ldlt_.transpositionsP().transpose() * y_;
        break;
      case FactorMethod::cholesky:
      case FactorMethod::jittered_cholesky:
        y_.noalias() = llt_.matrixL() * z_;
        break;
      case FactorMethod::none:
        throw FactorizationError("sampler has no factor", 0);
    }
  }

  CovarianceSpec spec_;
  FieldOptions opt_;

  std::vector<double> unique_;
  std::vector<double> candidate_;
  std::vector<std::size_t> slot_;
  std::vector<std::size_t> order_;
  std::vector<std::int64_t> key_;

  FactorMethod method_ = FactorMethod::none;
  double jitter_ = 0.0;
  bool prefer_pivoted_ = false;
  std::size_t factorizations_ = 0;

  Eigen::MatrixXd g_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  Eigen::VectorXd sqrt_d_;
  std::vector<double> rho_;
  std::vector<double> scale_;

  Eigen::VectorXd z_;
  Eigen::VectorXd y_;
};

}  // namespace hflow
