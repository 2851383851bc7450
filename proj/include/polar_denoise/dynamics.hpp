#pragma once

// Forward corruption, backward drift fields and the Euler-Maruyama sampler
// for the time-reversed killed Brownian motion.
//
// Forward model: y = x + sigma sqrt(U) V with x ~ prior, U ~ Exp(1),
// V ~ N(0, I_d). The time reversal is the homogeneous diffusion
// dY = b(Y) ds + dW, b = grad log h, h(y) = mean_i G(x_i, y), run until it
// hits the atom set. The hitting time is where int |b(Y)|^2 ds blows up,
// so the sampler stops once that integral reaches M^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "polar_denoise/binary_io.hpp"
#include "polar_denoise/error.hpp"
#include "polar_denoise/kernel.hpp"
#include "polar_denoise/parallel.hpp"
#include "polar_denoise/prior.hpp"
#include "polar_denoise/rng.hpp"
#include "polar_denoise/vec.hpp"

namespace polar_denoise {

struct ModelConfig {
  explicit ModelConfig(KernelParams k)
      : kernel(k),
        stop_threshold(20.0 * k.dim()),
        snap_radius(1e-6 * k.sigma()) {}

  KernelParams kernel;
  double stop_threshold;  // M, compared against sqrt(int |b|^2 ds)
  std::size_t max_steps = 1'000'000;
  double dt_max = 0.01;
  double dt_scale = 0.1;  // dt = min(dt_max, dt_scale / |b|^2)
  double snap_radius;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(stop_threshold > 0.0)) throw InvalidParameter("stop_threshold", "must be > 0");
    if (max_steps < 1) throw InvalidParameter("max_steps", "must be >= 1");
    if (!(dt_max > 0.0)) throw InvalidParameter("dt_max", "must be > 0");
    if (!(dt_scale > 0.0)) throw InvalidParameter("dt_scale", "must be > 0");
    if (!(snap_radius >= 0.0)) throw InvalidParameter("snap_radius", "must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Drift fields

struct DriftSample {
  Point drift;
  double log_h = 0.0;
  std::size_t nearest_atom = 0;
  double distance_estimate = 0.0;  // dim / |drift|
};

/// y -> (b(y), log h(y), nearest atom, distance estimate).
/// Implementations are immutable after construction and safe to share across threads.
class DriftField {
 public:
  virtual ~DriftField() = default;
  virtual int dim() const = 0;
  virtual void evaluate(std::span<const double> y, DriftSample& out) const = 0;
  /// Atom set the field is built on, when known; the sampler uses it for exact distances.
  virtual const EmpiricalPrior* support() const { return nullptr; }

  DriftSample operator()(std::span<const double> y) const {
    DriftSample s;
    evaluate(y, s);
    return s;
  }
};

using DriftFieldPtr = std::shared_ptr<const DriftField>;

namespace detail {

inline double distance_estimate(int dim, std::span<const double> drift) {
  const double n = vec::norm(drift);
  return n > 0.0 ? dim / n : std::numeric_limits<double>::infinity();
}

inline void check_dim(int dim, std::span<const double> y, const char* where) {
  if (y.size() != static_cast<std::size_t>(dim)) {
    throw DimensionMismatch(std::string(where) + ": point has dimension " + std::to_string(y.size()) +
                            ", field has " + std::to_string(dim));
  }
}

/// Streaming softmax-weighted vector sum: accumulates exp(l_i) * v_i with a
/// running max so no per-atom storage is needed.
class SoftmaxAccumulator {
 public:
  void reset(std::span<double> out) {
    out_ = out;
    std::fill(out_.begin(), out_.end(), 0.0);
    max_ = -std::numeric_limits<double>::infinity();
    sum_ = 0.0;
    best_ = 0;
    index_ = 0;
  }

  /// Adds exp(log_weight) * scale * (x - y).
  void add(double log_weight, double scale, std::span<const double> x, std::span<const double> y) {
    if (log_weight > max_) {
      const double rescale = std::exp(max_ - log_weight);
      for (auto& v : out_) v *= rescale;
      sum_ *= rescale;
      max_ = log_weight;
      best_ = index_;
    }
    const double w = std::exp(log_weight - max_);
    sum_ += w;
    const double c = w * scale;
    for (std::size_t j = 0; j < out_.size(); ++j) out_[j] += c * (x[j] - y[j]);
    ++index_;
  }

  /// Divides by the total weight; returns log sum exp(l_i).
  double finish() {
    const double inv = 1.0 / sum_;
    for (auto& v : out_) v *= inv;
    return max_ + std::log(sum_);
  }

  std::size_t argmax() const noexcept { return best_; }

 private:
  std::span<double> out_;
  double max_ = 0.0;
  double sum_ = 0.0;
  std::size_t best_ = 0;
  std::size_t index_ = 0;
};

}  // namespace detail

/// Exact backward drift for the uniform empirical prior:
/// b(y) = sum_i w_i(y) grad_y log G(x_i, y), w = softmax_i log G(x_i, y).
class ExactDrift final : public DriftField {
 public:
  ExactDrift(std::shared_ptr<const EmpiricalPrior> prior, KernelParams kernel)
      : prior_(std::move(prior)), kernel_(kernel) {
    if (prior_->dim() != kernel_.dim()) {
      throw DimensionMismatch("exact_drift: prior dim " + std::to_string(prior_->dim()) + " vs kernel dim " +
                              std::to_string(kernel_.dim()));
    }
  }

  int dim() const override { return kernel_.dim(); }
  const EmpiricalPrior* support() const override { return prior_.get(); }
  const KernelParams& kernel() const noexcept { return kernel_; }

  void evaluate(std::span<const double> y, DriftSample& out) const override {
    detail::check_dim(dim(), y, "exact_drift");
    out.drift.resize(y.size());
    detail::SoftmaxAccumulator acc;
    acc.reset(out.drift);
    for (std::size_t i = 0; i < prior_->size(); ++i) {
      const auto x = prior_->atom(i);
      const double r = vec::distance(x, y);
      if (r < kernel_.min_distance()) {
        throw SingularityError("exact_drift: observation within the distance floor of atom " + std::to_string(i));
      }
      const auto term = kernel::radial(kernel_, r);
      // grad_y log G = kappa * ratio * (x - y) / r
      acc.add(term.log_green, kernel_.kappa() * term.ratio / r, x, y);
    }
    out.log_h = acc.finish() - std::log(static_cast<double>(prior_->size()));
    out.nearest_atom = acc.argmax();
    out.distance_estimate = detail::distance_estimate(dim(), out.drift);
  }

  /// Posterior weights softmax_i log G(x_i, y), for diagnostics.
  std::vector<double> weights(std::span<const double> y) const {
    std::vector<double> logw(prior_->size());
    for (std::size_t i = 0; i < prior_->size(); ++i) logw[i] = kernel::log_green(kernel_, prior_->atom(i), y);
    const double lse = vec::log_sum_exp(logw);
    for (auto& v : logw) v = std::exp(v - lse);
    return logw;
  }

 private:
  std::shared_ptr<const EmpiricalPrior> prior_;
  KernelParams kernel_;
};

/// Large-d surrogate: weights |x_i - y|^{2-d}, per-atom vector d (x_i - y) / |x_i - y|^2.
/// Diagnostic only; at moderate d it differs from ExactDrift by O(1/d) and more.
class LeadingOrderDrift final : public DriftField {
 public:
  LeadingOrderDrift(std::shared_ptr<const EmpiricalPrior> prior, KernelParams kernel)
      : prior_(std::move(prior)), kernel_(kernel) {
    if (prior_->dim() != kernel_.dim()) throw DimensionMismatch("leading_order_drift: prior/kernel dim mismatch");
  }

  int dim() const override { return kernel_.dim(); }
  const EmpiricalPrior* support() const override { return prior_.get(); }

  void evaluate(std::span<const double> y, DriftSample& out) const override {
    detail::check_dim(dim(), y, "leading_order_drift");
    const double d = kernel_.dim();
    out.drift.resize(y.size());
    detail::SoftmaxAccumulator acc;
    acc.reset(out.drift);
    for (std::size_t i = 0; i < prior_->size(); ++i) {
      const auto x = prior_->atom(i);
      const double r = vec::distance(x, y);
      if (r < kernel_.min_distance()) {
        throw SingularityError("leading_order_drift: observation within the distance floor of atom " +
                               std::to_string(i));
      }
      acc.add(kernel::log_green_leading_order_radial(kernel_, r), d / (r * r), x, y);
    }
    out.log_h = acc.finish() - std::log(static_cast<double>(prior_->size()));
    out.nearest_atom = acc.argmax();
    out.distance_estimate = detail::distance_estimate(dim(), out.drift);
  }

 private:
  std::shared_ptr<const EmpiricalPrior> prior_;
  KernelParams kernel_;
};

/// Constant vector field; a test double and a baseline for loss comparisons.
class ConstantDrift final : public DriftField {
 public:
  explicit ConstantDrift(Point value) : value_(std::move(value)) {}
  int dim() const override { return static_cast<int>(value_.size()); }
  void evaluate(std::span<const double> y, DriftSample& out) const override {
    detail::check_dim(dim(), y, "constant_drift");
    out.drift = value_;
    out.log_h = 0.0;
    out.nearest_atom = 0;
    out.distance_estimate = detail::distance_estimate(dim(), out.drift);
  }

 private:
  Point value_;
};

inline DriftFieldPtr exact_drift(std::shared_ptr<const EmpiricalPrior> prior, const KernelParams& kernel) {
  return std::make_shared<ExactDrift>(std::move(prior), kernel);
}

inline DriftFieldPtr leading_order_drift(std::shared_ptr<const EmpiricalPrior> prior, const KernelParams& kernel) {
  return std::make_shared<LeadingOrderDrift>(std::move(prior), kernel);
}

// ---------------------------------------------------------------------------
// Perturbed drift

enum class PerturbationMode { additive_gaussian_field, smooth_bias };

inline PerturbationMode parse_perturbation_mode(const std::string& s) {
  if (s == "additive_gaussian_field") return PerturbationMode::additive_gaussian_field;
  if (s == "smooth_bias") return PerturbationMode::smooth_bias;
  throw InvalidParameter("perturbation", "unknown mode '" + s + "'");
}

/// base + p, where p is a smooth deterministic field with sup_y |p(y)| <= magnitude.
///
/// additive_gaussian_field: p = magnitude * g / max(1, |g|) with
///   g(y) = sqrt(2/K) sum_k a_k cos(w_k . y + phi_k), a_k ~ N(0, I/d),
///   w_k ~ N(0, I / length_scale^2), phi_k ~ U(0, 2 pi)  (random Fourier
///   features of a Gaussian field with E|g|^2 = 1).
/// smooth_bias: p = magnitude * u for a random unit vector u.
///
/// Both are globally Lipschitz. log_h and nearest_atom are passed through
/// from the base field unchanged.
class PerturbedDrift final : public DriftField {
 public:
  static constexpr std::size_t kFeatures = 64;

  PerturbedDrift(DriftFieldPtr base, PerturbationMode mode, double magnitude, std::uint64_t seed,
                 double length_scale = 1.0)
      : base_(std::move(base)), mode_(mode), magnitude_(magnitude) {
    if (!(magnitude >= 0.0)) throw InvalidParameter("magnitude", "must be >= 0");
    if (!(length_scale > 0.0)) throw InvalidParameter("length_scale", "must be > 0");
    const auto d = static_cast<std::size_t>(base_->dim());
    Rng rng = make_stream(seed, streams::perturbation);
    std::normal_distribution<double> normal;
    if (mode_ == PerturbationMode::smooth_bias) {
      bias_.resize(d);
      detail::fill_unit_direction(rng, bias_);
      return;
    }
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    amplitudes_.resize(kFeatures * d);
    frequencies_.resize(kFeatures * d);
    phases_.resize(kFeatures);
    const double a_scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t k = 0; k < kFeatures; ++k) {
      for (std::size_t j = 0; j < d; ++j) amplitudes_[k * d + j] = a_scale * normal(rng);
      for (std::size_t j = 0; j < d; ++j) frequencies_[k * d + j] = normal(rng) / length_scale;
      phases_[k] = phase(rng);
    }
  }

  int dim() const override { return base_->dim(); }
  const EmpiricalPrior* support() const override { return base_->support(); }
  double magnitude() const noexcept { return magnitude_; }

  /// The perturbation p(y) alone.
  Point perturbation(std::span<const double> y) const {
    const auto d = static_cast<std::size_t>(dim());
    Point p(d, 0.0);
    if (mode_ == PerturbationMode::smooth_bias) {
      for (std::size_t j = 0; j < d; ++j) p[j] = magnitude_ * bias_[j];
      return p;
    }
    for (std::size_t k = 0; k < kFeatures; ++k) {
      const std::span<const double> w(frequencies_.data() + k * d, d);
      const double c = std::cos(vec::dot(w, y) + phases_[k]);
      for (std::size_t j = 0; j < d; ++j) p[j] += c * amplitudes_[k * d + j];
    }
    const double g_scale = std::sqrt(2.0 / kFeatures);
    for (auto& v : p) v *= g_scale;
    const double scale = magnitude_ / std::max(1.0, vec::norm(p));
    for (auto& v : p) v *= scale;
    return p;
  }

  void evaluate(std::span<const double> y, DriftSample& out) const override {
    base_->evaluate(y, out);
    if (magnitude_ == 0.0) return;
    const Point p = perturbation(y);
    for (std::size_t j = 0; j < p.size(); ++j) out.drift[j] += p[j];
    out.distance_estimate = detail::distance_estimate(dim(), out.drift);
  }

 private:
  DriftFieldPtr base_;
  PerturbationMode mode_;
  double magnitude_;
  std::vector<double> bias_;
  std::vector<double> amplitudes_;
  std::vector<double> frequencies_;
  std::vector<double> phases_;
};

inline DriftFieldPtr perturb_drift(DriftFieldPtr base, PerturbationMode mode, double magnitude, std::uint64_t seed,
                                   double length_scale = 1.0) {
  return std::make_shared<PerturbedDrift>(std::move(base), mode, magnitude, seed, length_scale);
}

// ---------------------------------------------------------------------------
// Forward corruption

struct CorruptedSample {
  std::size_t atom_index;
  Point clean;
  Point noisy;
  double u;  // Exp(1) time factor
  Point v;   // standard normal direction
};

/// Draws `count` (x, x + sigma sqrt(u) v) pairs, x bootstrapped uniformly from the atoms.
inline std::vector<CorruptedSample> forward_corrupt(const EmpiricalPrior& prior, double sigma, std::size_t count,
                                                    std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidParameter("sigma", "must be >= 0");
  Rng rng = make_stream(seed, streams::forward_corruption);
  std::uniform_int_distribution<std::size_t> pick(0, prior.size() - 1);
  std::exponential_distribution<double> exponential(1.0);
  std::normal_distribution<double> normal;
  const auto d = static_cast<std::size_t>(prior.dim());
  std::vector<CorruptedSample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    CorruptedSample s;
    s.atom_index = pick(rng);
    const auto x = prior.atom(s.atom_index);
    s.clean.assign(x.begin(), x.end());
    s.u = exponential(rng);
    s.v.resize(d);
    for (auto& c : s.v) c = normal(rng);
    const double scale = sigma * std::sqrt(s.u);
    s.noisy.resize(d);
    for (std::size_t j = 0; j < d; ++j) s.noisy[j] = s.clean[j] + scale * s.v[j];
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<CorruptedSample> forward_corrupt(const EmpiricalPrior& prior, const ModelConfig& config,
                                                    std::size_t count) {
  config.validate();
  return forward_corrupt(prior, config.kernel.sigma(), count, config.seed);
}

// ---------------------------------------------------------------------------
// Reverse sampling

enum class StopReason { threshold_hit, step_cap, singularity_floor };

inline std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::threshold_hit: return "threshold_hit";
    case StopReason::step_cap: return "step_cap";
    case StopReason::singularity_floor: return "singularity_floor";
  }
  return "unknown";
}

enum class PathRecording { full, endpoints };

struct Trajectory {
  int dim = 0;
  std::vector<double> times;             // strictly increasing from 0
  std::vector<double> points;            // times.size() * dim
  std::vector<double> accumulated_l2sq;  // int_0^s |b(Y_r)|^2 dr, nondecreasing
  StopReason stop_reason = StopReason::step_cap;
  Point endpoint;
  std::optional<std::size_t> endpoint_snapped;
  double endpoint_distance = std::numeric_limits<double>::infinity();  // to the nearest atom, if known
  std::size_t steps = 0;

  std::size_t size() const noexcept { return times.size(); }
  std::span<const double> point(std::size_t k) const {
    return {points.data() + k * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  double duration() const { return times.empty() ? 0.0 : times.back(); }
  double final_l2sq() const { return accumulated_l2sq.empty() ? 0.0 : accumulated_l2sq.back(); }
};

namespace detail {

inline void record(Trajectory& t, double s, std::span<const double> y, double acc) {
  t.times.push_back(s);
  t.points.insert(t.points.end(), y.begin(), y.end());
  t.accumulated_l2sq.push_back(acc);
}

}  // namespace detail

/// Euler-Maruyama for dY = b(Y) ds + dW with dt = min(dt_max, dt_scale / |b|^2).
///
/// Stops when int |b|^2 ds >= M^2 (threshold_hit), after max_steps
/// (step_cap), or when Y comes within snap_radius of an atom
/// (singularity_floor). The endpoint is snapped to its nearest atom for the
/// first and last reasons when that atom lies within 10 * snap_radius.
/// Stream `stream` of config.seed drives the Brownian increments.
inline Trajectory reverse_sample(const DriftField& drift, std::span<const double> y0, const ModelConfig& config,
                                 std::uint64_t stream = 0, PathRecording recording = PathRecording::full) {
  config.validate();
  detail::check_dim(drift.dim(), y0, "reverse_sample");
  const auto d = static_cast<std::size_t>(drift.dim());
  const EmpiricalPrior* support = drift.support();
  const double threshold_sq = config.stop_threshold * config.stop_threshold;

  Rng rng = make_stream(config.seed, stream);
  std::normal_distribution<double> normal;

  Trajectory traj;
  traj.dim = drift.dim();
  Point y(y0.begin(), y0.end());
  double s = 0.0;
  double acc = 0.0;
  detail::record(traj, s, y, acc);

  DriftSample sample;
  std::size_t nearest = 0;
  double nearest_distance = std::numeric_limits<double>::infinity();
  bool stopped = false;

  for (;;) {
    if (support) {
      std::tie(nearest, nearest_distance) = support->nearest(y);
      if (nearest_distance < config.snap_radius) {
        traj.stop_reason = StopReason::singularity_floor;
        stopped = true;
        break;
      }
    }
    try {
      drift.evaluate(y, sample);
    } catch (const SingularityError&) {
      traj.stop_reason = StopReason::singularity_floor;
      if (!support) nearest_distance = 0.0;
      stopped = true;
      break;
    }
    if (!support) {
      nearest = sample.nearest_atom;
      nearest_distance = sample.distance_estimate;
      if (nearest_distance < config.snap_radius) {
        traj.stop_reason = StopReason::singularity_floor;
        stopped = true;
        break;
      }
    }
    const double b2 = vec::norm_sq(sample.drift);
    const double dt = b2 > 0.0 ? std::min(config.dt_max, config.dt_scale / b2) : config.dt_max;
    const double sqrt_dt = std::sqrt(dt);
    bool finite = true;
    for (std::size_t j = 0; j < d; ++j) {
      y[j] += sample.drift[j] * dt + sqrt_dt * normal(rng);
      finite = finite && std::isfinite(y[j]);
    }
    if (!finite) throw NonFiniteState("reverse_sample: non-finite state after step " + std::to_string(traj.steps));
    s += dt;
    acc += b2 * dt;
    ++traj.steps;
    if (recording == PathRecording::full) detail::record(traj, s, y, acc);
    if (acc >= threshold_sq) {
      traj.stop_reason = StopReason::threshold_hit;
      stopped = true;
      break;
    }
    if (traj.steps >= config.max_steps) break;
  }
  if (!stopped) traj.stop_reason = StopReason::step_cap;

  if (recording == PathRecording::endpoints && traj.times.back() != s) detail::record(traj, s, y, acc);
  traj.endpoint = y;

  // Distance of the final state, which differs from the loop's last
  // measurement when the loop ended right after a step.
  if (traj.stop_reason != StopReason::singularity_floor) {
    if (support) {
      std::tie(nearest, nearest_distance) = support->nearest(y);
    } else {
      try {
        drift.evaluate(y, sample);
        nearest = sample.nearest_atom;
        nearest_distance = sample.distance_estimate;
      } catch (const SingularityError&) {
        nearest_distance = 0.0;
      }
    }
  }
  traj.endpoint_distance = nearest_distance;
  if (traj.stop_reason != StopReason::step_cap && nearest_distance < 10.0 * config.snap_radius) {
    traj.endpoint_snapped = nearest;
  }
  return traj;
}

/// `count` independent trajectories; trajectory k uses stream k, so the
/// result is the same for every `jobs`.
inline std::vector<Trajectory> reverse_sample_batch(const DriftField& drift, std::span<const double> y0,
                                                    const ModelConfig& config, std::size_t count, unsigned jobs = 1,
                                                    PathRecording recording = PathRecording::endpoints) {
  std::vector<Trajectory> out(count);
  parallel_for(count, jobs, [&](std::size_t k) { out[k] = reverse_sample(drift, y0, config, k, recording); });
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory export

inline void write_trajectory_csv(const Trajectory& t, std::ostream& out) {
  out << 's';
  for (int j = 0; j < t.dim; ++j) out << ",y" << j;
  out << ",accumulated_l2sq\r\n";
  for (std::size_t k = 0; k < t.size(); ++k) {
    out << io::format_double(t.times[k]);
    for (double v : t.point(k)) out << ',' << io::format_double(v);
    out << ',' << io::format_double(t.accumulated_l2sq[k]) << "\r\n";
  }
}

// "PDNT" | u32 version=1 | u32 dim | u64 states | states x (f64 s, dim f64, f64 acc)
// | u32 stop_reason | i64 snapped (-1: none) | u64 steps | f64 endpoint_distance | dim f64 endpoint
inline constexpr std::uint32_t kTrajectoryFormatVersion = 1;

inline std::vector<std::uint8_t> encode_trajectory(const Trajectory& t) {
  io::ByteWriter w;
  w.raw("PDNT");
  w.u32(kTrajectoryFormatVersion);
  w.u32(static_cast<std::uint32_t>(t.dim));
  w.u64(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    w.f64(t.times[k]);
    for (double v : t.point(k)) w.f64(v);
    w.f64(t.accumulated_l2sq[k]);
  }
  w.u32(static_cast<std::uint32_t>(t.stop_reason));
  w.i64(t.endpoint_snapped ? static_cast<std::int64_t>(*t.endpoint_snapped) : -1);
  w.u64(t.steps);
  w.f64(t.endpoint_distance);
  for (double v : t.endpoint) w.f64(v);
  return w.bytes();
}

inline Trajectory decode_trajectory(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < 20 || r.raw(4) != "PDNT") {
    throw FormatError(FormatErrorKind::corrupt_header, 0, "corrupt trajectory header");
  }
  const auto version = r.u32();
  if (version != kTrajectoryFormatVersion) {
    throw FormatError(FormatErrorKind::version_mismatch, 4,
                      "trajectory format version " + std::to_string(version) + " not supported");
  }
  Trajectory t;
  t.dim = static_cast<int>(r.u32());
  const auto states = r.u64();
  for (std::uint64_t k = 0; k < states; ++k) {
    t.times.push_back(r.f64());
    for (int j = 0; j < t.dim; ++j) t.points.push_back(r.f64());
    t.accumulated_l2sq.push_back(r.f64());
  }
  const auto reason = r.u32();
  if (reason > 2) throw FormatError(FormatErrorKind::corrupt_header, r.offset() - 4, "bad stop reason");
  t.stop_reason = static_cast<StopReason>(reason);
  const auto snapped = r.i64();
  if (snapped >= 0) t.endpoint_snapped = static_cast<std::size_t>(snapped);
  t.steps = r.u64();
  t.endpoint_distance = r.f64();
  t.endpoint.resize(static_cast<std::size_t>(t.dim));
  for (auto& v : t.endpoint) v = r.f64();
  return t;
}

// ---------------------------------------------------------------------------
// Exponential-time identity E X_tau = lambda E int_0^tau X_t dt

/// Produces X at t = 0, h, ..., steps*h (steps + 1 values) for one path.
using PathSampler = std::function<std::vector<double>(Rng&, std::size_t steps, double h)>;

struct ExpTimeReport {
  std::size_t samples = 0;
  double lhs_mean = 0.0;  // E X_tau
  double lhs_se = 0.0;
  double rhs_mean = 0.0;  // lambda E int_0^tau X_t dt
  double rhs_se = 0.0;
  double combined_se = 0.0;  // sqrt(lhs_se^2 + rhs_se^2)
  double z_score = 0.0;
  bool agree = false;  // |lhs - rhs| <= 4 combined_se
};

/// Monte Carlo estimate of both sides with tau ~ Exp(lambda) independent of
/// the path. tau is capped at `horizon` (choose lambda * horizon >> 1); each
/// path is simulated on [0, tau] with steps no longer than max_dt and the
/// time integral uses the trapezoid rule.
inline ExpTimeReport exp_time_identity_check(const PathSampler& sampler, double lambda, double horizon,
                                             std::size_t samples, double max_dt, std::uint64_t seed) {
  if (!(lambda > 0.0)) throw InvalidParameter("lambda", "must be > 0");
  if (!(horizon > 0.0)) throw InvalidParameter("horizon", "must be > 0");
  if (samples < 2) throw InvalidParameter("samples", "need at least 2");
  if (!(max_dt > 0.0)) throw InvalidParameter("max_dt", "must be > 0");
  Rng rng = make_stream(seed, streams::experiment);
  std::exponential_distribution<double> exponential(lambda);
  double l_sum = 0.0, l_sq = 0.0, r_sum = 0.0, r_sq = 0.0;
  for (std::size_t n = 0; n < samples; ++n) {
    const double tau = std::min(exponential(rng), horizon);
    const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tau / max_dt)));
    const double h = tau / static_cast<double>(steps);
    const auto path = sampler(rng, steps, h);
    if (path.size() != steps + 1) throw DimensionMismatch("exp_time_identity_check: sampler returned wrong length");
    double integral = 0.5 * (path.front() + path.back());
    for (std::size_t k = 1; k < steps; ++k) integral += path[k];
    integral *= h;
    const double lhs = path.back();
    const double rhs = lambda * integral;
    l_sum += lhs;
    l_sq += lhs * lhs;
    r_sum += rhs;
    r_sq += rhs * rhs;
  }
  const double n = static_cast<double>(samples);
  ExpTimeReport rep;
  rep.samples = samples;
  rep.lhs_mean = l_sum / n;
  rep.rhs_mean = r_sum / n;
  rep.lhs_se = std::sqrt(std::max(0.0, (l_sq / n - rep.lhs_mean * rep.lhs_mean) / (n - 1)));
  rep.rhs_se = std::sqrt(std::max(0.0, (r_sq / n - rep.rhs_mean * rep.rhs_mean) / (n - 1)));
  rep.combined_se = std::hypot(rep.lhs_se, rep.rhs_se);
  const double diff = std::abs(rep.lhs_mean - rep.rhs_mean);
  rep.z_score = rep.combined_se > 0.0 ? diff / rep.combined_se : (diff == 0.0 ? 0.0 : INFINITY);
  rep.agree = diff <= 4.0 * rep.combined_se;
  return rep;
}

}  // namespace polar_denoise
