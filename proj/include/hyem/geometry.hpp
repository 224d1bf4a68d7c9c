#pragma once

/// Exact hyperbolic kernels for curvature -1: Lorentz (hyperboloid) and
/// Poincare ball models, origin exponential/logarithmic maps, geodesic
/// distances and the radius/distortion calculators used to size indexes.
///
/// Every kernel computes in double precision. Hot paths take spans over
/// contiguous coordinates; the typed wrappers validate their inputs.

#include <cmath>
#include <limits>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "hyem/error.hpp"
#include "hyem/util.hpp"

namespace hyem::geometry {

inline constexpr double kDefaultClampEpsilon = 1e-7;
inline constexpr double kPoincareMaxNorm = 1.0 - 1e-12;

/// Curvature is fixed at -1; only the arcosh guard is configurable.
struct CurvatureConfig {
  double curvature = -1.0;
  double epsilon_clamp = kDefaultClampEpsilon;

  void validate() const {
    if (curvature != -1.0) throw Error("only curvature -1 is supported");
    if (!(epsilon_clamp > 0.0 && epsilon_clamp <= 1e-3))
      throw Error("epsilon_clamp must lie in (0, 1e-3]");
  }
};

/// Vector in the tangent space at the origin; its norm is the hyperbolic
/// radius of exp0 of it.
class TangentVector {
 public:
  TangentVector() = default;
  explicit TangentVector(std::vector<double> coords) : coords_(std::move(coords)) {
    if (!all_finite(coords_)) throw Error("invalid tangent vector");
  }
  static TangentVector zero(std::size_t dim) { return TangentVector(std::vector<double>(dim, 0.0)); }

  std::size_t dim() const noexcept { return coords_.size(); }
  double norm() const { return hyem::norm(coords_); }
  std::span<const double> coords() const noexcept { return coords_; }
  const std::vector<double>& values() const noexcept { return coords_; }
  double operator[](std::size_t i) const { return coords_[i]; }

 private:
  std::vector<double> coords_;
};

/// Point on the upper sheet of the unit hyperboloid; coords[0] is the
/// time-like component.
class LorentzPoint {
 public:
  LorentzPoint() = default;
  explicit LorentzPoint(std::vector<double> coords) : coords_(std::move(coords)) {
    if (coords_.size() < 2 || !all_finite(coords_) || coords_[0] < 1.0)
      throw Error("invalid point");
  }

  static LorentzPoint origin(std::size_t dim) {
    std::vector<double> c(dim + 1, 0.0);
    c[0] = 1.0;
    return LorentzPoint(std::move(c));
  }

  /// Projects spatial coordinates onto the hyperboloid (y0 = sqrt(1+|ys|^2)).
  static LorentzPoint from_spatial(std::span<const double> spatial) {
    std::vector<double> c(spatial.size() + 1);
    std::copy(spatial.begin(), spatial.end(), c.begin() + 1);
    c[0] = std::sqrt(1.0 + dot(spatial, spatial));
    return LorentzPoint(std::move(c));
  }

  std::size_t dim() const noexcept { return coords_.empty() ? 0 : coords_.size() - 1; }
  double time() const { return coords_[0]; }
  std::span<const double> spatial() const { return std::span<const double>(coords_).subspan(1); }
  std::span<const double> coords() const noexcept { return coords_; }
  double operator[](std::size_t i) const { return coords_[i]; }

 private:
  std::vector<double> coords_;
};

/// Point inside the open unit ball.
class PoincarePoint {
 public:
  PoincarePoint() = default;
  explicit PoincarePoint(std::vector<double> coords) : coords_(std::move(coords)) {
    if (!all_finite(coords_)) throw Error("invalid point");
    if (hyem::norm(coords_) >= 1.0) throw Error("outside ball");
  }

  std::size_t dim() const noexcept { return coords_.size(); }
  double norm() const { return hyem::norm(coords_); }
  std::span<const double> coords() const noexcept { return coords_; }

 private:
  std::vector<double> coords_;
};

// ---------------------------------------------------------------------------
// Scalar helpers

/// sinh(r)/r with its series near zero.
inline double sinhc(double r) {
  if (std::abs(r) < 1e-4) return 1.0 + r * r / 6.0;
  return std::sinh(r) / r;
}

/// arcosh(1 + x) for x >= 0 without cancellation.
inline double acosh1p(double x) {
  if (x <= 0.0) return 0.0;
  return std::log1p(x + std::sqrt(x * (x + 2.0)));
}

/// arcosh with the argument clamped to the domain. Arguments below 1 + eps
/// are treated as the degenerate (coincident) case.
inline double arcosh_clamped(double z, double eps = kDefaultClampEpsilon) {
  if (!(z >= 1.0 + eps)) {
    if (!(z > 1.0)) return 0.0;
    return acosh1p(z - 1.0);
  }
  return std::acosh(z);
}

// ---------------------------------------------------------------------------
// Lorentz kernels over raw coordinates

inline double lorentz_inner(std::span<const double> a, std::span<const double> b) {
  double s = -a[0] * b[0];
  for (std::size_t i = 1; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// z - 1 where z = -<a,b>_L, computed as half the Lorentz square norm of
/// a - b so that nearby points do not lose all significant digits.
inline double lorentz_gap(std::span<const double> a, std::span<const double> b) {
  const double d0 = a[0] - b[0];
  double s = -d0 * d0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    const double di = a[i] - b[i];
    s += di * di;
  }
  // Overflowed coordinates give NaN or -inf here; propagate instead of
  // reporting coincident points.
  if (std::isnan(s) || std::isinf(s)) return s > 0.0 ? s : std::numeric_limits<double>::quiet_NaN();
  return s > 0.0 ? 0.5 * s : 0.0;
}

/// Geodesic distance arcosh(-<a,b>_L). Inside the clamp band (z < 1 + eps)
/// the value is recovered from the coordinate differences instead.
inline double lorentz_distance(std::span<const double> a, std::span<const double> b,
                               double eps = kDefaultClampEpsilon) {
  const double z = -lorentz_inner(a, b);
  if (z >= 1.0 + eps) return std::acosh(z);
  return acosh1p(lorentz_gap(a, b));
}

/// Writes exp_o(0, u) into y (size dim + 1).
inline void exp0_into(std::span<const double> u, std::span<double> y) {
  const double r = norm(u);
  y[0] = std::cosh(r);
  const double scale = sinhc(r);
  for (std::size_t i = 0; i < u.size(); ++i) y[i + 1] = scale * u[i];
}

/// Writes log_o(y) into u (size dim). The radius is taken as asinh(|y_s|),
/// which equals arcosh(y0) on the hyperboloid but keeps full precision near
/// the origin; a vanishing spatial part maps to the zero vector.
inline void log0_into(std::span<const double> y, std::span<double> u) {
  const auto spatial = y.subspan(1);
  const double s = norm(spatial);
  if (!(s > 0.0) || !(y[0] > 1.0)) {
    std::fill(u.begin(), u.end(), 0.0);
    return;
  }
  const double scale = std::asinh(s) / s;
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = scale * spatial[i];
}

/// Hyperbolic distance between exp0(u) and exp0(v), from tangent coordinates.
inline double tangent_pair_distance(std::span<const double> u, std::span<const double> v) {
  std::vector<double> a(u.size() + 1), b(v.size() + 1);
  exp0_into(u, a);
  exp0_into(v, b);
  return lorentz_distance(a, b);
}

/// Distance between exp0(u) and exp0(v) together with its gradients with
/// respect to u and v (either may be empty to skip). At coincidence the
/// distance is not differentiable and the zero subgradient is returned.
///
/// Scratch buffers are caller-owned so the training loop does not allocate.
struct DistanceScratch {
  std::vector<double> yu, yv;
};

inline double tangent_distance_grad(std::span<const double> u, std::span<const double> v,
                                    std::span<double> grad_u, std::span<double> grad_v,
                                    DistanceScratch& scratch) {
  const std::size_t d = u.size();
  scratch.yu.resize(d + 1);
  scratch.yv.resize(d + 1);
  exp0_into(u, scratch.yu);
  exp0_into(v, scratch.yv);
  const double gap = lorentz_gap(scratch.yu, scratch.yv);
  const double dist = acosh1p(gap);

  const double denom = std::sqrt(gap * (gap + 2.0));
  const bool singular = !(denom > 1e-12);
  const double dd_dz = singular ? 0.0 : 1.0 / denom;

  // dz/du = w0 * sinhc(a) * u - sinhc(a) * ws - c(a) * (u . ws) * u
  // with c(a) = (a cosh a - sinh a) / a^3 and w = exp0 of the other side.
  auto accumulate = [&](std::span<const double> self, std::span<const double> other_y,
                        std::span<double> out) {
    if (out.empty()) return;
    if (singular) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    const double a = norm(self);
    const double sa = sinhc(a);
    double ca;
    if (a < 1e-3) {
      ca = 1.0 / 3.0 + a * a / 30.0;
    } else {
      ca = (a * std::cosh(a) - std::sinh(a)) / (a * a * a);
    }
    const auto ws = other_y.subspan(1);
    const double u_dot_ws = dot(self, ws);
    const double w0 = other_y[0];
    for (std::size_t i = 0; i < d; ++i) {
      const double dz = w0 * sa * self[i] - sa * ws[i] - ca * u_dot_ws * self[i];
      out[i] = dd_dz * dz;
    }
  };
  accumulate(u, scratch.yv, grad_u);
  accumulate(v, scratch.yu, grad_v);
  return dist;
}

// ---------------------------------------------------------------------------
// Typed public API

inline double lorentz_distance(const LorentzPoint& a, const LorentzPoint& b,
                               const CurvatureConfig& cfg = {}) {
  if (a.dim() != b.dim()) throw Error("dimension mismatch");
  return lorentz_distance(a.coords(), b.coords(), cfg.epsilon_clamp);
}

inline LorentzPoint lorentz_exp0(const TangentVector& u) {
  std::vector<double> y(u.dim() + 1);
  exp0_into(u.coords(), y);
  return LorentzPoint(std::move(y));
}

inline TangentVector lorentz_log0(const LorentzPoint& y) {
  std::vector<double> u(y.dim());
  log0_into(y.coords(), u);
  return TangentVector(std::move(u));
}

inline PoincarePoint poincare_exp0(const TangentVector& u) {
  const double r = u.norm();
  std::vector<double> x(u.dim(), 0.0);
  if (r > 0.0) {
    const double radius = std::min(std::tanh(0.5 * r), kPoincareMaxNorm);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = radius * u[i] / r;
  }
  return PoincarePoint(std::move(x));
}

inline TangentVector poincare_log0(const PoincarePoint& x) {
  const double n = x.norm();
  if (n >= 1.0) throw Error("outside ball");
  std::vector<double> u(x.dim(), 0.0);
  if (n > 0.0) {
    const double scale = 2.0 * std::atanh(n) / n;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = scale * x.coords()[i];
  }
  return TangentVector(std::move(u));
}

/// arcosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2))).
inline double poincare_distance(const PoincarePoint& x, const PoincarePoint& y) {
  if (x.dim() != y.dim()) throw Error("dimension mismatch");
  double diff2 = 0.0;
  for (std::size_t i = 0; i < x.dim(); ++i) {
    const double t = x.coords()[i] - y.coords()[i];
    diff2 += t * t;
  }
  const double nx = dot(x.coords(), x.coords());
  const double ny = dot(y.coords(), y.coords());
  return acosh1p(2.0 * diff2 / ((1.0 - nx) * (1.0 - ny)));
}

inline PoincarePoint lorentz_to_poincare(const LorentzPoint& y) {
  std::vector<double> x(y.dim());
  const double denom = 1.0 + y.time();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = y.spatial()[i] / denom;
  return PoincarePoint(std::move(x));
}

inline LorentzPoint poincare_to_lorentz(const PoincarePoint& x) {
  const double n2 = dot(x.coords(), x.coords());
  const double denom = 1.0 - n2;
  std::vector<double> y(x.dim() + 1);
  y[0] = (1.0 + n2) / denom;
  for (std::size_t i = 0; i < x.dim(); ++i) y[i + 1] = 2.0 * x.coords()[i] / denom;
  return LorentzPoint(std::move(y));
}

// ---------------------------------------------------------------------------
// Distortion and capacity calculators

/// Tangent-space distortion factor sinh(R)/R for a radius budget R.
inline double kappa(double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw Error("kappa requires R > 0");
  return sinhc(radius);
}

/// ceil(kappa(R) * k). Products within 1e-9 of an integer count as that
/// integer, so the R -> 0 limit yields exactly k.
inline std::size_t oversampling_threshold(double radius, std::size_t k) {
  if (k == 0) throw Error("k must be positive");
  const double product = kappa(radius) * static_cast<double>(k);
  const double nearest = std::round(product);
  if (std::abs(product - nearest) <= 1e-9 * static_cast<double>(k))
    return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(product));
}

/// Leading capacity term D ln(b) / (d - 1) for a b-ary hierarchy of depth D.
/// The separation-dependent correction is omitted, so this is a lower-bound
/// heuristic rather than a guarantee.
inline double required_radius(int depth, double branching, int dim) {
  if (depth < 1) throw Error("depth must be positive");
  if (!(branching > 1.0)) throw Error("branching must exceed 1");
  if (dim < 2) throw Error("dimension must be at least 2");
  return static_cast<double>(depth) * std::log(branching) / static_cast<double>(dim - 1);
}

}  // namespace hyem::geometry
