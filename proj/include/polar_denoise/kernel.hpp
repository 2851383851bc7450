#pragma once

// Resolvent (Green) kernel of d-dimensional Brownian motion killed at rate
// 1/sigma^2:
//
//   G(x, y) = (2 pi)^{-d/2} (2 / sigma^2) (kappa / |x-y|)^nu K_nu(kappa |x-y|),
//   nu = (d - 2) / 2,  kappa = sqrt(2) / sigma.
//
// Only logarithms are exposed; across atoms at d = 200 the raw values span
// hundreds of orders of magnitude.

#include <cmath>
#include <numbers>
#include <span>

#include "polar_denoise/error.hpp"
#include "polar_denoise/specfun.hpp"
#include "polar_denoise/vec.hpp"

namespace polar_denoise {

class KernelParams {
 public:
  static constexpr double kDefaultMinDistance = 1e-12;

  KernelParams(int dim, double sigma, double min_distance = kDefaultMinDistance)
      : dim_(dim), sigma_(sigma), min_distance_(min_distance) {
    if (dim < 3) throw InvalidParameter("dim", "must be >= 3, got " + std::to_string(dim));
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidParameter("sigma", "must be positive and finite");
    if (!(min_distance > 0.0)) throw InvalidParameter("min_distance", "must be positive");
    order_ = (dim - 2) / 2.0;
    kappa_ = std::numbers::sqrt2 / sigma;
    log_normaliser_ = -0.5 * dim * std::log(2.0 * std::numbers::pi) + std::log(2.0 / (sigma * sigma));
  }

  int dim() const noexcept { return dim_; }
  double sigma() const noexcept { return sigma_; }
  double order() const noexcept { return order_; }
  double kappa() const noexcept { return kappa_; }
  double min_distance() const noexcept { return min_distance_; }
  /// log[(2 pi)^{-d/2} 2 / sigma^2], the constant that cancels in every ratio.
  double log_normaliser() const noexcept { return log_normaliser_; }

 private:
  int dim_;
  double sigma_;
  double min_distance_;
  double order_;
  double kappa_;
  double log_normaliser_;
};

namespace kernel {

inline double checked_distance(const KernelParams& p, std::span<const double> x, std::span<const double> y) {
  vec::require_same_size(x, y, "kernel");
  if (x.size() != static_cast<std::size_t>(p.dim())) {
    throw DimensionMismatch("kernel: point dimension " + std::to_string(x.size()) + " but kernel dim " +
                            std::to_string(p.dim()));
  }
  const double r = vec::distance(x, y);
  if (r < p.min_distance()) {
    throw SingularityError("kernel: |x-y| = " + std::to_string(r) + " below the distance floor");
  }
  return r;
}

/// Radial profile: log G as a function of r = |x - y| together with the
/// Bessel ratio needed for the gradient.
struct RadialTerm {
  double log_green;
  double ratio;  // K_{nu+1} / K_nu at kappa r
};

inline RadialTerm radial(const KernelParams& p, double r) {
  const double z = p.kappa() * r;
  const auto be = specfun::bessel_k(p.order(), z);
  return {p.log_normaliser() + p.order() * std::log(p.kappa() / r) + be.log_k, be.ratio_up};
}

inline double log_green_radial(const KernelParams& p, double r) { return radial(p, r).log_green; }

inline double log_green(const KernelParams& p, std::span<const double> x, std::span<const double> y) {
  return radial(p, checked_distance(p, x, y)).log_green;
}

/// Gradient of log G(x, y) in y: -kappa * ratio * (y - x) / |y - x|.
inline Point grad2_log_green(const KernelParams& p, std::span<const double> x, std::span<const double> y) {
  const double r = checked_distance(p, x, y);
  const double scale = -p.kappa() * specfun::bessel_k_ratio(p.order(), p.kappa() * r) / r;
  Point g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = scale * (y[i] - x[i]);
  return g;
}

/// log of (2 pi nu)^{-1/2} (nu / (pi e))^nu |x-y|^{-2nu} / sigma^2.
/// Diagnostic surrogate for large d; at d = 10 it can be far off.
inline double log_green_leading_order_radial(const KernelParams& p, double r) {
  const double nu = p.order();
  return -0.5 * std::log(2.0 * std::numbers::pi * nu) + nu * (std::log(nu / std::numbers::pi) - 1.0) -
         2.0 * nu * std::log(r) - 2.0 * std::log(p.sigma());
}

inline double log_green_leading_order(const KernelParams& p, std::span<const double> x, std::span<const double> y) {
  return log_green_leading_order_radial(p, checked_distance(p, x, y));
}

}  // namespace kernel
}  // namespace polar_denoise
