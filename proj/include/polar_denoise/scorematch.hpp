#pragma once

// Denoising score matching for the backward drift.
//
// A training pair is (y, t) with y = xi + sigma sqrt(u) v, xi bootstrapped
// from the atoms, and t = grad_y log G(xi, y)
//   = -(sqrt(2)/sigma) (v/|v|) K_{nu+1}(sqrt(2u)|v|) / K_nu(sqrt(2u)|v|).
// The drift minimises E |b(y) - t|^2 1{sigma sqrt(u) |v| >= delta} outside
// the delta-neighbourhood of the atoms.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "polar_denoise/binary_io.hpp"
#include "polar_denoise/dynamics.hpp"
#include "polar_denoise/error.hpp"
#include "polar_denoise/kernel.hpp"
#include "polar_denoise/prior.hpp"
#include "polar_denoise/rng.hpp"
#include "polar_denoise/specfun.hpp"

namespace polar_denoise {

struct TrainingPair {
  Point input;
  Point target;
  double radial = 0.0;  // sigma sqrt(u) |v|
  bool keep = false;    // radial >= delta
};

/// Flat storage for many pairs of one dimension.
class TrainingSet {
 public:
  explicit TrainingSet(int dim) : dim_(dim) {}

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return radial_.size(); }
  std::size_t kept() const noexcept {
    std::size_t k = 0;
    for (auto v : keep_) k += v;
    return k;
  }

  void push_back(std::span<const double> input, std::span<const double> target, double radial, bool keep) {
    if (input.size() != static_cast<std::size_t>(dim_) || target.size() != static_cast<std::size_t>(dim_)) {
      throw DimensionMismatch("TrainingSet: pair dimension does not match");
    }
    inputs_.insert(inputs_.end(), input.begin(), input.end());
    targets_.insert(targets_.end(), target.begin(), target.end());
    radial_.push_back(radial);
    keep_.push_back(keep ? 1 : 0);
  }
  void push_back(const TrainingPair& p) { push_back(p.input, p.target, p.radial, p.keep); }

  std::span<const double> input(std::size_t i) const { return {inputs_.data() + i * stride(), stride()}; }
  std::span<const double> target(std::size_t i) const { return {targets_.data() + i * stride(), stride()}; }
  double radial(std::size_t i) const { return radial_[i]; }
  bool keep(std::size_t i) const { return keep_[i] != 0; }

  TrainingPair pair(std::size_t i) const {
    return {Point(input(i).begin(), input(i).end()), Point(target(i).begin(), target(i).end()), radial_[i], keep(i)};
  }

 private:
  std::size_t stride() const noexcept { return static_cast<std::size_t>(dim_); }
  int dim_;
  std::vector<double> inputs_;
  std::vector<double> targets_;
  std::vector<double> radial_;
  std::vector<std::uint8_t> keep_;
};

enum class TargetForm {
  exact_ratio,  // -(sqrt 2 / sigma) (v/|v|) K_{nu+1}/K_nu(sqrt(2u)|v|)
  asymptotic,   // -v / (sigma sqrt u), the large-d simplification
};

/// Monte Carlo training pairs from the forward model with bootstrapped clean samples.
inline TrainingSet make_training_pairs(const EmpiricalPrior& prior, const KernelParams& kernel, double delta,
                                       std::size_t count, std::uint64_t seed,
                                       TargetForm form = TargetForm::exact_ratio) {
  if (!(delta >= 0.0)) throw InvalidParameter("delta", "must be >= 0");
  if (count < 1) throw InvalidParameter("count", "must be >= 1");
  if (prior.dim() != kernel.dim()) throw DimensionMismatch("make_training_pairs: prior/kernel dim mismatch");
  const auto d = static_cast<std::size_t>(prior.dim());
  const double sigma = kernel.sigma();
  Rng rng = make_stream(seed, streams::training_pairs);
  std::uniform_int_distribution<std::size_t> pick(0, prior.size() - 1);
  std::exponential_distribution<double> exponential(1.0);
  std::normal_distribution<double> normal;

  TrainingSet set(prior.dim());
  Point v(d), input(d), target(d);
  for (std::size_t n = 0; n < count; ++n) {
    const auto xi = prior.atom(pick(rng));
    const double u = exponential(rng);
    for (auto& c : v) c = normal(rng);
    const double vnorm = vec::norm(v);
    const double root_u = std::sqrt(u);
    const double radial = sigma * root_u * vnorm;
    for (std::size_t j = 0; j < d; ++j) input[j] = xi[j] + sigma * root_u * v[j];
    double scale;
    if (form == TargetForm::exact_ratio) {
      // Bessel argument sqrt(2u)|v| = kappa * radial.
      scale = -kernel.kappa() * specfun::bessel_k_ratio(kernel.order(), kernel.kappa() * radial) / vnorm;
    } else {
      scale = -1.0 / (sigma * root_u);
    }
    for (std::size_t j = 0; j < d; ++j) target[j] = scale * v[j];
    set.push_back(input, target, radial, radial >= delta);
  }
  return set;
}

/// Per-pair squared residuals |b(input) - target|^2 over kept pairs.
///
/// Sign convention: target already carries the minus sign, so this equals
/// |b(input) + (sqrt 2 / sigma)(v/|v|) K_{nu+1}/K_nu|^2.
inline std::vector<double> dsm_loss_terms(const DriftField& drift, const TrainingSet& pairs) {
  std::vector<double> out;
  DriftSample s;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!pairs.keep(i)) continue;
    drift.evaluate(pairs.input(i), s);
    out.push_back(vec::distance_sq(s.drift, pairs.target(i)));
  }
  if (out.empty()) throw EmptySelection("dsm_loss: no training pair survives the radial cut");
  return out;
}

inline double dsm_loss(const DriftField& drift, const TrainingSet& pairs) {
  const auto terms = dsm_loss_terms(drift, pairs);
  double s = 0.0;
  for (double t : terms) s += t;
  return s / static_cast<double>(terms.size());
}

/// Nadaraya-Watson estimate of the drift: Gaussian-kernel weighted mean of
/// kept targets. A light stand-in for a trained network; it is Lipschitz
/// wherever the data are dense relative to the bandwidth.
class LocalDrift final : public DriftField {
 public:
  LocalDrift(const TrainingSet& pairs, double bandwidth) : dim_(pairs.dim()), bandwidth_(bandwidth) {
    if (!(bandwidth > 0.0)) throw InvalidParameter("bandwidth", "must be > 0");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (!pairs.keep(i)) continue;
      inputs_.insert(inputs_.end(), pairs.input(i).begin(), pairs.input(i).end());
      targets_.insert(targets_.end(), pairs.target(i).begin(), pairs.target(i).end());
    }
    if (inputs_.empty()) throw EmptySelection("fit_local_drift: no kept training pair");
  }

  int dim() const override { return dim_; }
  std::size_t size() const noexcept { return inputs_.size() / static_cast<std::size_t>(dim_); }

  void evaluate(std::span<const double> y, DriftSample& out) const override {
    detail::check_dim(dim_, y, "local_drift");
    const auto d = static_cast<std::size_t>(dim_);
    const double inv_two_h2 = 1.0 / (2.0 * bandwidth_ * bandwidth_);
    out.drift.assign(d, 0.0);
    double max_log = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      const std::span<const double> x(inputs_.data() + i * d, d);
      const double lw = -vec::distance_sq(x, y) * inv_two_h2;
      if (lw > max_log) {
        const double rescale = std::exp(max_log - lw);
        for (auto& v : out.drift) v *= rescale;
        sum *= rescale;
        max_log = lw;
        best = i;
      }
      const double w = std::exp(lw - max_log);
      sum += w;
      const double* t = targets_.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) out.drift[j] += w * t[j];
    }
    for (auto& v : out.drift) v /= sum;
    out.log_h = 0.0;
    out.nearest_atom = best;  // nearest training input
    out.distance_estimate = detail::distance_estimate(dim_, out.drift);
  }

 private:
  int dim_;
  double bandwidth_;
  std::vector<double> inputs_;
  std::vector<double> targets_;
};

inline DriftFieldPtr fit_local_drift(const TrainingSet& pairs, double bandwidth) {
  return std::make_shared<LocalDrift>(pairs, bandwidth);
}

/// Per trajectory: sqrt( sum_k |c(Y_k) - r(Y_k)|^2 1{dist(Y_k, atoms) > exclusion} (s_{k+1} - s_k) ),
/// a left-point discretisation of the L^2(zeta) path norm. Distances come
/// from the reference field's support, or its distance estimate if it has none.
inline std::vector<double> drift_l2_error_along_paths(const DriftField& candidate, const DriftField& reference,
                                                      const std::vector<Trajectory>& trajectories,
                                                      double exclusion_delta) {
  const EmpiricalPrior* support = reference.support();
  std::vector<double> out;
  out.reserve(trajectories.size());
  DriftSample cs, rs;
  for (const auto& t : trajectories) {
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
      const auto y = t.point(k);
      double dist;
      if (support) {
        dist = support->nearest(y).second;
      } else {
        reference.evaluate(y, rs);
        dist = rs.distance_estimate;
      }
      if (dist <= exclusion_delta) continue;
      candidate.evaluate(y, cs);
      reference.evaluate(y, rs);
      acc += vec::distance_sq(cs.drift, rs.drift) * (t.times[k + 1] - t.times[k]);
    }
    out.push_back(std::sqrt(acc));
  }
  return out;
}

// "PDNP" | u32 version=1 | u32 dim | u64 n | n x (dim f64 input, dim f64 target, f64 radial, u8 keep)
inline constexpr std::uint32_t kTrainingFormatVersion = 1;

inline std::vector<std::uint8_t> encode_training_set(const TrainingSet& set) {
  io::ByteWriter w;
  w.raw("PDNP");
  w.u32(kTrainingFormatVersion);
  w.u32(static_cast<std::uint32_t>(set.dim()));
  w.u64(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (double v : set.input(i)) w.f64(v);
    for (double v : set.target(i)) w.f64(v);
    w.f64(set.radial(i));
    w.u8(set.keep(i) ? 1 : 0);
  }
  return w.bytes();
}

inline TrainingSet decode_training_set(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < 20 || r.raw(4) != "PDNP") {
    throw FormatError(FormatErrorKind::corrupt_header, 0, "corrupt training-pair header");
  }
  const auto version = r.u32();
  if (version != kTrainingFormatVersion) {
    throw FormatError(FormatErrorKind::version_mismatch, 4,
                      "training-pair format version " + std::to_string(version) + " not supported");
  }
  const auto dim = static_cast<int>(r.u32());
  const auto n = r.u64();
  if (dim < 1) throw FormatError(FormatErrorKind::corrupt_header, 8, "corrupt training-pair header: dim");
  TrainingSet set(dim);
  Point input(static_cast<std::size_t>(dim)), target(static_cast<std::size_t>(dim));
  for (std::uint64_t i = 0; i < n; ++i) {
    for (auto& v : input) v = r.f64();
    for (auto& v : target) v = r.f64();
    const double radial = r.f64();
    const bool keep = r.u8() != 0;
    set.push_back(input, target, radial, keep);
  }
  return set;
}

inline void save_training_set(const TrainingSet& set, const std::string& path) {
  io::write_file(path, encode_training_set(set));
}

inline TrainingSet load_training_set(const std::string& path) { return decode_training_set(io::read_file(path)); }

}  // namespace polar_denoise
