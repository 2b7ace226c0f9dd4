#pragma once

// Infinitesimal covariance kernels: the stable-law family exp(-beta |x|^alpha),
// its mollified C2 approximations, and the boundary classification of the
// two-point distance diffusion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hflow/detail/spline.hpp"
#include "hflow/errors.hpp"

namespace hflow {

enum class KernelKind { exact, mollified };
enum class Mollifier { gaussian, bump };
// `unit` replaces the stable family by phi == 1; used to exercise the
// degenerate paths of the pipeline.
enum class BaseFamily { stable, unit };
enum class BoundaryClass { coalescing, non_coalescing };

inline std::string to_string(Mollifier m) { return m == Mollifier::gaussian ? "gaussian" : "bump"; }
inline std::string to_string(BoundaryClass b) {
  return b == BoundaryClass::coalescing ? "coalescing" : "non_coalescing";
}

namespace detail {

inline constexpr double kGaussianSupport = 7.5;  // two-sided tail mass 6.4e-14
inline constexpr double kBumpRaw0 = 0.36787944117144233;  // exp(-1)

inline double bump_raw(double z) {
  const double q = 1.0 - z * z;
  return q > 0.0 ? std::exp(-1.0 / q) : 0.0;
}

// Mass of the unnormalized bump exp(-1/(1-z^2)) on (-1, 1). All derivatives
// vanish at the ends so the trapezoid rule is spectrally accurate here.
inline double bump_mass() {
  static const double mass = [] {
    constexpr int n = 4096;
    double s = 0.0;
    for (int i = 1; i < n; ++i) s += bump_raw(-1.0 + 2.0 * i / n);
    return s * 2.0 / n;
  }();
  return mass;
}

struct MollifierDensity {
  Mollifier kind;

  double support() const { return kind == Mollifier::gaussian ? kGaussianSupport : 1.0; }

  double operator()(double z) const {
    if (kind == Mollifier::gaussian) return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return bump_raw(z) / bump_mass();
  }

  double second_derivative(double z) const {
    if (kind == Mollifier::gaussian) return (z * z - 1.0) * (*this)(z);
    const double q = 1.0 - z * z;
    if (q <= 0.0) return 0.0;
    const double q2 = q * q;
    return (*this)(z) * (4.0 * z * z / (q2 * q2) - 2.0 / q2 - 8.0 * z * z / (q2 * q));
  }
};

inline double stable_phi(BaseFamily base, double alpha, double beta, double x) {
  if (base == BaseFamily::unit) return 1.0;
  const double ax = std::abs(x);
  if (alpha == 1.0) return std::exp(-beta * ax);
  return std::exp(-beta * std::pow(ax, alpha));
}

template <class F>
double trapezoid(F&& f, double a, double b, std::size_t intervals) {
  const double h = (b - a) / static_cast<double>(intervals);
  double s = 0.5 * (f(a) + f(b));
  for (std::size_t i = 1; i < intervals; ++i) s += f(a + h * static_cast<double>(i));
  return s * h;
}

// Trapezoid with one Richardson step against half the nodes, over
// [kink, far] (either orientation) in the graded variable d = L t^m. Grading
// turns a |d|^alpha kink into t^(m alpha) so the doubling test converges for
// non-integer alpha.
template <class F>
double graded_piece(F&& f, double kink, double far, int m, std::size_t q) {
  const double len = std::abs(far - kink);
  if (len == 0.0) return 0.0;
  const double dir = far > kink ? 1.0 : -1.0;
  auto g = [&](double t) {
    if (m == 1) return len * f(kink + dir * len * t);
    const double tm1 = std::pow(t, m - 1);
    return len * m * tm1 * f(kink + dir * len * tm1 * t);
  };
  const auto n = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(len * static_cast<double>(q))));
  const double fine = trapezoid(g, 0.0, 1.0, 2 * n);
  const double coarse = trapezoid(g, 0.0, 1.0, n);
  return (4.0 * fine - coarse) / 3.0;
}

// Integral over [a, b] split at `kink` when it lies inside; nodes no wider
// than 1/q before grading.
template <class F>
double split_trapezoid(F&& f, double a, double b, std::optional<double> kink, std::size_t q, int grading = 1) {
  if (kink && *kink > a && *kink < b) return graded_piece(f, *kink, a, grading, q) + graded_piece(f, *kink, b, grading, q);
  return graded_piece(f, a, b, 1, q);
}

inline int kink_grading(BaseFamily base, double alpha) {
  if (base == BaseFamily::unit || alpha == 1.0) return 1;
  return static_cast<int>(std::ceil(4.0 / alpha));
}

struct MollifiedTable {
  double alpha;
  double beta;
  double epsilon;
  Mollifier mollifier;
  BaseFamily base;
  std::size_t requested_points;
  std::size_t used_points = 0;
  double normalization = 1.0;
  double curvature0 = 0.0;  // phi_eps''(0)
  UniformSpline spline;

  // (phi * h_eps)(x) = int phi(x - eps z) g(z) dz.
  double convolution(double x, std::size_t q) const {
    const MollifierDensity g{mollifier};
    const double z_max = g.support();
    auto integrand = [&](double z) { return stable_phi(base, alpha, beta, x - epsilon * z) * g(z); };
    std::optional<double> kink;
    if (base == BaseFamily::stable) kink = x / epsilon;
    return split_trapezoid(integrand, -z_max, z_max, kink, q, kink_grading(base, alpha));
  }

  double second_derivative_at_zero(std::size_t q) const {
    const MollifierDensity g{mollifier};
    const double z_max = g.support();
    auto integrand = [&](double z) {
      return stable_phi(base, alpha, beta, epsilon * z) * g.second_derivative(z);
    };
    std::optional<double> kink;
    if (base == BaseFamily::stable) kink = 0.0;
    return split_trapezoid(integrand, -z_max, z_max, kink, q, kink_grading(base, alpha)) / (epsilon * epsilon);
  }

  double direct(double x, std::size_t q) const { return normalization * convolution(std::abs(x), q); }
};

}  // namespace detail

/// Immutable covariance kernel. Copies share the interpolation table, so a spec
/// can be handed to many workers by value.
class CovarianceSpec {
 public:
  static CovarianceSpec exact(double alpha, double beta, BaseFamily base = BaseFamily::stable) {
    validate_family(alpha, beta);
    CovarianceSpec s;
    s.alpha_ = alpha;
    s.beta_ = beta;
    s.base_ = base;
    return s;
  }

  KernelKind kind() const noexcept { return table_ ? KernelKind::mollified : KernelKind::exact; }
  double alpha() const noexcept { return alpha_; }
  double beta() const noexcept { return beta_; }
  BaseFamily base() const noexcept { return base_; }
  std::optional<double> epsilon() const {
    return table_ ? std::optional<double>(table_->epsilon) : std::nullopt;
  }
  std::optional<Mollifier> mollifier() const {
    return table_ ? std::optional<Mollifier>(table_->mollifier) : std::nullopt;
  }
  double normalization() const noexcept { return table_ ? table_->normalization : 1.0; }
  std::size_t quadrature_points() const noexcept { return table_ ? table_->requested_points : 0; }
  // Points per unit of the scaled mollifier variable after refinement.
  std::size_t converged_quadrature_points() const noexcept { return table_ ? table_->used_points : 0; }
  double interpolation_spacing() const noexcept { return table_ ? table_->spline.spacing() : 0.0; }
  double interpolation_range() const noexcept { return table_ ? table_->spline.range() : 0.0; }

  /// True for the exact exponential kernel, whose Gram matrices on sorted
  /// points have a closed-form bidiagonal Cholesky structure.
  bool is_markov() const noexcept { return !table_ && base_ == BaseFamily::stable && alpha_ == 1.0; }

  double base_phi(double x) const { return detail::stable_phi(base_, alpha_, beta_, x); }

  double operator()(double x) const {
    if (!table_) return base_phi(x);
    const double ax = std::abs(x);
    if (ax <= table_->spline.range()) return table_->spline(ax);
    return table_->direct(ax, table_->used_points);
  }

  /// 1 - phi(x) without cancellation near the origin.
  double one_minus(double x) const {
    const double ax = std::abs(x);
    if (!table_) {
      if (base_ == BaseFamily::unit) return 0.0;
      return -std::expm1(-beta_ * (alpha_ == 1.0 ? ax : std::pow(ax, alpha_)));
    }
    if (base_ == BaseFamily::unit) return 0.0;
    if (ax < 1e-4 * table_->epsilon) return -0.5 * table_->curvature0 * ax * ax;
    return 1.0 - (*this)(ax);
  }

  /// Evaluation by quadrature, bypassing the interpolation table.
  double eval_direct(double x) const {
    if (!table_) return base_phi(x);
    return table_->direct(x, table_->used_points);
  }

  double second_derivative_at_zero() const { return table_ ? table_->curvature0 : 0.0; }

 private:
  friend CovarianceSpec build_mollified(double, double, double, Mollifier, std::size_t, BaseFamily);

  static void validate_family(double alpha, double beta) {
    if (!(alpha > 0.0 && alpha < 2.0)) throw DomainError("alpha must lie in (0, 2)");
    if (!(beta > 0.0 && std::isfinite(beta))) throw DomainError("beta must be positive and finite");
  }

  double alpha_ = 1.0;
  double beta_ = 1.0;
  BaseFamily base_ = BaseFamily::stable;
  std::shared_ptr<const detail::MollifiedTable> table_;
};

inline double eval_phi(const CovarianceSpec& spec, double x) { return spec(x); }

struct MollifyOptions {
  double tolerance = 1e-9;
  std::size_t max_points = std::size_t{1} << 16;
  double table_cutoff = 1e-13;  // table covers |x| where phi exceeds this
  double max_table_range = 64.0;
  double nodes_per_epsilon = 16.0;
};

/// Builds phi_eps = c_eps * (phi * h_eps) with h_eps(y) = h(y/eps)/eps and
/// c_eps chosen so that phi_eps(0) = 1.
inline CovarianceSpec build_mollified(double alpha, double beta, double epsilon, Mollifier mollifier,
                                      std::size_t quadrature_points, BaseFamily base) {
  CovarianceSpec::validate_family(alpha, beta);
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw DomainError("epsilon must lie in (0, 1)");
  if (quadrature_points < 2) throw DomainError("quadrature_points must be at least 2");
  const MollifyOptions opt;

  auto table = std::make_shared<detail::MollifiedTable>();
  table->alpha = alpha;
  table->beta = beta;
  table->epsilon = epsilon;
  table->mollifier = mollifier;
  table->base = base;
  table->requested_points = quadrature_points;

  // Doubling until the Richardson-corrected rule is stable at a few probes
  // straddling the kink region.
  const double probes[] = {0.0, 0.5 * epsilon, epsilon, 2.0 * epsilon, 1.0};
  std::size_t q = quadrature_points;
  for (;;) {
    double worst = 0.0;
    for (double x : probes) worst = std::max(worst, std::abs(table->convolution(x, 2 * q) - table->convolution(x, q)));
    if (worst <= opt.tolerance) break;
    q *= 2;
    if (q > opt.max_points)
      throw QuadratureError("mollifier convolution did not converge (difference " + std::to_string(worst) + ")");
  }
  table->used_points = 2 * q;

  const double at_zero = table->convolution(0.0, table->used_points);
  if (!(at_zero > 0.0)) throw QuadratureError("mollified kernel vanishes at the origin");
  table->normalization = 1.0 / at_zero;
  table->curvature0 = table->normalization * table->second_derivative_at_zero(table->used_points);

  double range = opt.max_table_range;
  if (base == BaseFamily::stable) {
    const double tail = std::pow(std::log(1.0 / opt.table_cutoff) / beta, 1.0 / alpha);
    range = std::min(range, tail + detail::MollifierDensity{mollifier}.support() * epsilon);
  }
  range = std::max(range, 8.0 * epsilon);
  const double h = epsilon / opt.nodes_per_epsilon;
  const auto nodes = static_cast<std::size_t>(std::ceil(range / h)) + 1;
  std::vector<double> values(nodes);
  values[0] = 1.0;
  for (std::size_t i = 1; i < nodes; ++i)
    values[i] = table->normalization * table->convolution(h * static_cast<double>(i), table->used_points);
  table->spline = detail::UniformSpline(std::move(values), h);

  CovarianceSpec s;
  s.alpha_ = alpha;
  s.beta_ = beta;
  s.base_ = base;
  s.table_ = std::move(table);
  return s;
}

inline CovarianceSpec build_mollified(double alpha, double beta, double epsilon,
                                      Mollifier mollifier = Mollifier::gaussian,
                                      std::size_t quadrature_points = 64) {
  return build_mollified(alpha, beta, epsilon, mollifier, quadrature_points, BaseFamily::stable);
}

struct BoundaryOptions {
  double divergence_cap = 1e6;
  // Dyadic pieces that fail to shrink by this factor for `stall_refinements`
  // consecutive levels are read as logarithmic (or worse) growth. Integrands
  // behaving like x^{1-alpha}/beta are resolved for alpha below ~1.985.
  double stall_ratio = 0.99;
  int stall_refinements = 8;
  double relative_tolerance = 1e-10;
  int max_refinements = 600;
};

/// Feller test on int_0^delta x / (1 - phi(x)) dx, summed over dyadic pieces
/// [delta 2^{-k-1}, delta 2^{-k}].
inline BoundaryClass classify_boundary(const CovarianceSpec& spec, double delta,
                                       const BoundaryOptions& opt = {}) {
  if (!(delta > 0.0)) throw DomainError("delta must be positive");
  constexpr int samples = 257;
  int zero_run = 0;
  for (int i = 1; i <= samples; ++i) {
    const double x = delta * i / samples;
    zero_run = spec.one_minus(x) <= 0.0 ? zero_run + 1 : 0;
    if (zero_run >= 2)
      throw DegenerateKernelError("1 - phi vanishes on a set of positive measure in (0, delta]");
  }

  auto integrand = [&](double x) { return x / spec.one_minus(x); };
  double sum = 0.0;
  double previous_piece = 0.0;
  int stalled = 0;
  double hi = delta;
  for (int k = 0; k < opt.max_refinements; ++k) {
    const double lo = 0.5 * hi;
    const double piece =
        boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, lo, hi, 10, 1e-12);
    if (!std::isfinite(piece)) throw QuadratureError("non-finite dyadic piece near x = " + std::to_string(lo));
    sum += piece;
    if (sum > opt.divergence_cap) return BoundaryClass::non_coalescing;
    if (k > 0) {
      stalled = (piece >= opt.stall_ratio * previous_piece) ? stalled + 1 : 0;
      if (stalled >= opt.stall_refinements) return BoundaryClass::non_coalescing;
      if (k >= 3 && piece <= opt.relative_tolerance * sum) return BoundaryClass::coalescing;
    }
    previous_piece = piece;
    hi = lo;
  }
  throw QuadratureError("boundary classification undecided after max_refinements");
}

/// Symmetric Gram matrix G_ij = kernel(x_i - x_j).
template <class Kernel>
Eigen::MatrixXd gram_of(const Kernel& kernel, std::span<const double> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = kernel(0.0);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = kernel(points[static_cast<std::size_t>(i)] - points[static_cast<std::size_t>(j)]);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

template <class Kernel>
bool check_positive_definite(const Kernel& kernel, std::span<const double> points, double tol = -1.0) {
  if (points.empty()) return true;
  if (tol < 0.0) tol = 1e-8 * static_cast<double>(points.size());
  const Eigen::MatrixXd g = gram_of(kernel, points);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -tol;
}

inline bool check_positive_definite(const CovarianceSpec& spec, std::span<const double> points,
                                    double tol = -1.0) {
  return check_positive_definite<CovarianceSpec>(spec, points, tol);
}

}  // namespace hflow
