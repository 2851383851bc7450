#pragma once

// Closed-form posterior of the clean signal given an observation y under the
// uniform empirical prior: P(X_0 = x_i | X_tau = y) is proportional to
// G(x_i, y). Plus exact sampling from it and the numerical certificates for
// concentration near the nearest atoms.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "polar_denoise/error.hpp"
#include "polar_denoise/kernel.hpp"
#include "polar_denoise/prior.hpp"
#include "polar_denoise/rng.hpp"
#include "polar_denoise/vec.hpp"

namespace polar_denoise {

struct PosteriorWeights {
  std::vector<double> log_weights;  // log-sum-exp == 0
  Point observation;
  KernelParams kernel;

  std::size_t size() const noexcept { return log_weights.size(); }
  double weight(std::size_t i) const { return std::exp(log_weights[i]); }
  std::vector<double> weights() const {
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i]);
    return w;
  }
};

/// log w_i = log G(x_i, y) - logsumexp_j log G(x_j, y).
/// If y coincides with an atom (closer than the kernel's distance floor)
/// the posterior is the point mass on the lowest such index.
inline PosteriorWeights posterior_weights(const EmpiricalPrior& prior, const KernelParams& kernel,
                                          std::span<const double> y) {
  if (prior.dim() != kernel.dim() || y.size() != static_cast<std::size_t>(prior.dim())) {
    throw DimensionMismatch("posterior_weights: prior dim " + std::to_string(prior.dim()) + ", kernel dim " +
                            std::to_string(kernel.dim()) + ", observation dim " + std::to_string(y.size()));
  }
  PosteriorWeights pw{std::vector<double>(prior.size()), Point(y.begin(), y.end()), kernel};
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const double r = vec::distance(prior.atom(i), y);
    if (r < kernel.min_distance()) {
      std::fill(pw.log_weights.begin(), pw.log_weights.end(), -std::numeric_limits<double>::infinity());
      pw.log_weights[i] = 0.0;
      return pw;
    }
    pw.log_weights[i] = kernel::log_green_radial(kernel, r);
  }
  const double lse = vec::log_sum_exp(pw.log_weights);
  for (auto& v : pw.log_weights) v -= lse;
  return pw;
}

/// Inverse-CDF categorical draws of atom indices.
inline std::vector<std::size_t> posterior_sample(const PosteriorWeights& weights, std::size_t count,
                                                 std::uint64_t seed) {
  const auto w = weights.weights();
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  Rng rng = make_stream(seed, streams::posterior_sampling);
  std::vector<std::size_t> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

/// Posterior mass of atoms with |x_i - center| <= radius.
inline double ball_mass(const PosteriorWeights& weights, const EmpiricalPrior& prior, std::span<const double> center,
                        double radius) {
  if (weights.size() != prior.size()) throw DimensionMismatch("ball_mass: weights do not match the prior");
  std::vector<double> inside;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    if (vec::distance(prior.atom(i), center) <= radius) inside.push_back(weights.log_weights[i]);
  }
  if (inside.empty()) return 0.0;
  return std::min(1.0, std::exp(vec::log_sum_exp(inside)));
}

struct ConcentrationCertificate {
  int dim = 0;
  double sigma = 0.0;
  double radius = 0.0;
  double delta = 0.0;
  double epsilon_used = 0.0;  // empirical mass of B(y, r)
  double lhs_mass = 0.0;      // posterior mass of B(y, (1+delta) r)
  double rhs_bound = 0.0;     // max(0, 1 - (1+delta)^{2-d} / epsilon)
  double margin = 0.0;        // lhs - rhs
  double log_off_mass = 0.0;  // log of the posterior mass outside B(y, (1+delta) r)
  bool holds = false;         // margin >= -1e-12
};

inline constexpr double kCertificateSlack = 1e-12;

/// Posterior ball mass against the lower bound 1 - eps^{-1} (1+delta)^{2-d},
/// with eps the exact empirical mass of the closed ball B(y, r).
inline ConcentrationCertificate concentration_certificate(const EmpiricalPrior& prior, const KernelParams& kernel,
                                                          std::span<const double> y, double r, double delta) {
  if (!(r > 0.0)) throw InvalidParameter("r", "must be > 0");
  if (!(delta > 0.0)) throw InvalidParameter("delta", "must be > 0");
  std::size_t in_ball = 0;
  for (std::size_t i = 0; i < prior.size(); ++i) in_ball += vec::distance(prior.atom(i), y) <= r ? 1 : 0;
  if (in_ball == 0) throw EmptySelection("concentration_certificate: no atom within r of the observation");

  const auto pw = posterior_weights(prior, kernel, y);
  const double outer = (1.0 + delta) * r;
  std::vector<double> off;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    if (vec::distance(prior.atom(i), y) > outer) off.push_back(pw.log_weights[i]);
  }

  ConcentrationCertificate c;
  c.dim = kernel.dim();
  c.sigma = kernel.sigma();
  c.radius = r;
  c.delta = delta;
  c.epsilon_used = static_cast<double>(in_ball) / static_cast<double>(prior.size());
  c.lhs_mass = ball_mass(pw, prior, y, outer);
  c.log_off_mass = off.empty() ? -std::numeric_limits<double>::infinity() : vec::log_sum_exp(off);
  c.rhs_bound = std::max(0.0, 1.0 - std::pow(1.0 + delta, 2.0 - kernel.dim()) / c.epsilon_used);
  c.margin = c.lhs_mass - c.rhs_bound;
  c.holds = c.margin >= -kCertificateSlack;
  return c;
}

struct DominationReport {
  double green_ratio = 0.0;  // sum_{B} G / sum G
  double power_ratio = 0.0;  // sum_{B} |x-y|^{2-d} / sum |x-y|^{2-d}
  bool holds = false;        // green_ratio >= power_ratio - 1e-12
};

/// Both sides of the monotone-domination inequality for the ball B(y, radius).
inline DominationReport monotone_domination_check(const EmpiricalPrior& prior, const KernelParams& kernel,
                                                  std::span<const double> y, double radius) {
  std::vector<double> green_all, green_in, power_all, power_in;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const double r = vec::distance(prior.atom(i), y);
    if (r < kernel.min_distance()) throw SingularityError("monotone_domination_check: observation on an atom");
    const double lg = kernel::log_green_radial(kernel, r);
    const double lp = (2.0 - kernel.dim()) * std::log(r);
    green_all.push_back(lg);
    power_all.push_back(lp);
    if (r <= radius) {
      green_in.push_back(lg);
      power_in.push_back(lp);
    }
  }
  DominationReport rep;
  if (!green_in.empty()) {
    rep.green_ratio = std::exp(vec::log_sum_exp(green_in) - vec::log_sum_exp(green_all));
    rep.power_ratio = std::exp(vec::log_sum_exp(power_in) - vec::log_sum_exp(power_all));
  }
  rep.holds = rep.green_ratio >= rep.power_ratio - kCertificateSlack;
  return rep;
}

}  // namespace polar_denoise
