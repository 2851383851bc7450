#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "polar_denoise/dynamics.hpp"
#include "polar_denoise/posterior.hpp"

using namespace polar_denoise;

namespace {

std::shared_ptr<const EmpiricalPrior> make_prior(int d, std::vector<double> atoms) {
  return std::make_shared<const EmpiricalPrior>(d, std::move(atoms));
}

Point axis_point(int d, std::initializer_list<double> head) {
  Point p(static_cast<std::size_t>(d), 0.0);
  std::copy(head.begin(), head.end(), p.begin());
  return p;
}

Point random_point(Rng& rng, int d, double scale) {
  std::normal_distribution<double> n;
  Point p(static_cast<std::size_t>(d));
  for (auto& v : p) v = scale * n(rng);
  return p;
}

double rel_vec_error(const Point& a, const Point& ref) { return vec::distance(a, ref) / vec::norm(ref); }

std::vector<double> snap_histogram(const std::vector<Trajectory>& ts, std::size_t atoms) {
  std::vector<double> h(atoms + 1, 0.0);  // last slot: no snap
  for (const auto& t : ts) h[t.endpoint_snapped ? *t.endpoint_snapped : atoms] += 1.0 / ts.size();
  return h;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double worst = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    worst = std::max(worst, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return worst;
}

}  // namespace

TEST(ModelConfigTest, DefaultsAndValidation) {
  ModelConfig c(KernelParams(10, 0.5));
  EXPECT_EQ(c.stop_threshold, 200.0);
  EXPECT_EQ(c.snap_radius, 5e-7);
  EXPECT_NO_THROW(c.validate());
  c.max_steps = 0;
  EXPECT_THROW(c.validate(), InvalidParameter);
  c = ModelConfig(KernelParams(10, 0.5));
  c.dt_max = 0.0;
  EXPECT_THROW(c.validate(), InvalidParameter);
  c = ModelConfig(KernelParams(10, 0.5));
  c.stop_threshold = -1.0;
  EXPECT_THROW(c.validate(), InvalidParameter);
}

TEST(ExactDriftTest, WeightsNormalised) {
  Rng rng = make_stream(1);
  auto prior = std::make_shared<const EmpiricalPrior>(generate_synthetic(SyntheticKind::sphere_shell, 12, 30, 2));
  const ExactDrift drift(prior, KernelParams(12, 0.7));
  for (int t = 0; t < 20; ++t) {
    const auto w = drift.weights(random_point(rng, 12, 0.5));
    for (double v : w) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(ExactDriftTest, SingleAtomPointsAtAtom) {
  const KernelParams k(6, 1.0);
  const Point x0 = axis_point(6, {0.3, -0.2, 1.0});
  const auto drift = exact_drift(make_prior(6, x0), k);
  const Point y = axis_point(6, {1.0, 0.5, 0.0, 0.4});
  const auto s = (*drift)(y);
  const Point g = kernel::grad2_log_green(k, x0, y);
  EXPECT_LT(rel_vec_error(s.drift, g), 1e-13);
  const Point toward = vec::difference(x0, y);
  EXPECT_NEAR(vec::dot(s.drift, toward) / (vec::norm(s.drift) * vec::norm(toward)), 1.0, 1e-13);
}

TEST(ExactDriftTest, MatchesFiniteDifferenceOfLogH) {
  Rng rng = make_stream(3);
  for (int d : {3, 8, 20}) {
    auto prior = std::make_shared<const EmpiricalPrior>(generate_synthetic(SyntheticKind::sphere_shell, d, 7, 5));
    const ExactDrift drift(prior, KernelParams(d, 1.0));
    for (int t = 0; t < 5; ++t) {
      const Point y = random_point(rng, d, 0.4);
      const auto s = drift(y);
      Point fd(static_cast<std::size_t>(d));
      for (std::size_t j = 0; j < fd.size(); ++j) {
        const double h = 1e-6;
        Point yp = y, ym = y;
        yp[j] += h;
        ym[j] -= h;
        fd[j] = (drift(yp).log_h - drift(ym).log_h) / (2.0 * h);
      }
      EXPECT_LT(rel_vec_error(fd, s.drift), 1e-5) << "d=" << d;
    }
  }
}

TEST(ExactDriftTest, ReflectionSymmetry) {
  const int d = 10;
  const auto drift = exact_drift(make_prior(d, [] {
                                   std::vector<double> a(20, 0.0);
                                   a[0] = 1.0;
                                   a[11] = 1.0;
                                   return a;
                                 }()),
                                 KernelParams(d, 1.0));
  // y on the bisector of e1 and e2.
  Rng rng = make_stream(9);
  for (int t = 0; t < 10; ++t) {
    Point y = random_point(rng, d, 0.5);
    y[1] = y[0];
    const auto s = (*drift)(y);
    EXPECT_NEAR(s.drift[0] - s.drift[1], 0.0, 1e-10 * vec::norm(s.drift));
  }
}

TEST(ExactDriftTest, MagnitudeAtDimension400) {
  const int d = 400;
  const auto drift = exact_drift(make_prior(d, Point(400, 0.0)), KernelParams(d, 1.0));
  const auto s = (*drift)(axis_point(d, {2.0}));
  const double target = (d - 2) / 2.0;
  EXPECT_GE(vec::norm(s.drift), 0.99 * target);
  EXPECT_LE(vec::norm(s.drift), 1.01 * target);
  EXPECT_NEAR(s.distance_estimate, d / vec::norm(s.drift), 1e-12);
}

TEST(ExactDriftTest, NearestAtomAndErrors) {
  const auto prior = make_prior(3, {0, 0, 0, 2, 0, 0});
  const auto drift = exact_drift(prior, KernelParams(3, 1.0));
  EXPECT_EQ((*drift)(Point{1.5, 0.1, 0}).nearest_atom, 1u);
  EXPECT_EQ((*drift)(Point{1.0, 0.3, 0}).nearest_atom, 0u);  // tie
  EXPECT_THROW((*drift)(Point{0, 0, 0}), SingularityError);
  EXPECT_THROW((*drift)(Point{0, 0}), DimensionMismatch);
  EXPECT_THROW(exact_drift(prior, KernelParams(4, 1.0)), DimensionMismatch);
}

TEST(LeadingOrderDriftTest, SingleAtomFormula) {
  const int d = 9;
  const Point x0 = axis_point(d, {0.5, 0.5});
  const auto drift = leading_order_drift(make_prior(d, x0), KernelParams(d, 1.0));
  const Point y = axis_point(d, {-0.3, 0.0, 0.7});
  Point expected = vec::difference(x0, y);
  const double r2 = vec::norm_sq(expected);
  for (auto& v : expected) v *= d / r2;
  EXPECT_LT(rel_vec_error((*drift)(y).drift, expected), 1e-14);
}

TEST(LeadingOrderDriftTest, AgreesWithExactAtDimension1000) {
  const int d = 1000;
  auto prior = std::make_shared<const EmpiricalPrior>(generate_synthetic(SyntheticKind::sphere_shell, d, 5, 12));
  const KernelParams k(d, 1.0);
  const auto exact = exact_drift(prior, k);
  const auto lead = leading_order_drift(prior, k);
  Rng rng = make_stream(13);
  for (int t = 0; t < 10; ++t) {
    const Point y = random_point(rng, d, 0.05);
    EXPECT_LE(rel_vec_error((*lead)(y).drift, (*exact)(y).drift), 0.01);
  }
}

TEST(PerturbDrift, ZeroMagnitudeIsBitwiseIdentity) {
  auto prior = std::make_shared<const EmpiricalPrior>(generate_synthetic(SyntheticKind::sphere_shell, 7, 4, 1));
  const auto base = exact_drift(prior, KernelParams(7, 1.0));
  for (auto mode : {PerturbationMode::additive_gaussian_field, PerturbationMode::smooth_bias}) {
    const auto p = perturb_drift(base, mode, 0.0, 99);
    Rng rng = make_stream(2);
    for (int t = 0; t < 20; ++t) {
      const Point y = random_point(rng, 7, 1.0);
      const auto a = (*base)(y), b = (*p)(y);
      EXPECT_EQ(a.drift, b.drift);
      EXPECT_EQ(a.log_h, b.log_h);
    }
  }
}

TEST(PerturbDrift, SupBoundOnProbes) {
  const int d = 15;
  const auto base = std::make_shared<ConstantDrift>(Point(d, 0.0));
  for (double m : {0.05, 1.0, 7.0}) {
    const auto p = perturb_drift(base, PerturbationMode::additive_gaussian_field, m, 5);
    Rng rng = make_stream(6);
    double sup = 0.0;
    for (int t = 0; t < 1000; ++t) sup = std::max(sup, vec::norm((*p)(random_point(rng, d, 2.0)).drift));
    EXPECT_LE(sup, m * (1.0 + 1e-12));
    EXPECT_GT(sup, 0.3 * m);
  }
  const auto bias = perturb_drift(base, PerturbationMode::smooth_bias, 0.4, 5);
  EXPECT_NEAR(vec::norm((*bias)(Point(d, 3.0)).drift), 0.4, 1e-15);
}

TEST(PerturbDrift, SeedsGiveDifferentFields) {
  const int d = 6;
  const auto base = std::make_shared<ConstantDrift>(Point(d, 0.0));
  const auto a = perturb_drift(base, PerturbationMode::additive_gaussian_field, 1.0, 1);
  const auto b = perturb_drift(base, PerturbationMode::additive_gaussian_field, 1.0, 2);
  Rng rng = make_stream(3);
  double diff = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Point y = random_point(rng, d, 1.0);
    diff = std::max(diff, vec::distance((*a)(y).drift, (*b)(y).drift));
  }
  EXPECT_GT(diff, 0.0);
  EXPECT_THROW(perturb_drift(base, PerturbationMode::smooth_bias, -1.0, 1), InvalidParameter);
  EXPECT_THROW(parse_perturbation_mode("wiggle"), InvalidParameter);
}

TEST(ForwardCorrupt, ZeroSigmaLeavesCleanPoints) {
  const auto prior = generate_synthetic(SyntheticKind::sphere_shell, 5, 6, 1);
  for (const auto& s : forward_corrupt(prior, 0.0, 50, 3)) EXPECT_EQ(s.noisy, s.clean);
}

TEST(ForwardCorrupt, DeterministicAndBootstrapped) {
  const auto prior = generate_synthetic(SyntheticKind::sphere_shell, 5, 4, 1);
  const auto a = forward_corrupt(prior, 0.5, 4000, 8);
  const auto b = forward_corrupt(prior, 0.5, 4000, 8);
  std::vector<int> counts(4, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].noisy, b[i].noisy);
    counts[a[i].atom_index]++;
    const auto atom = prior.atom(a[i].atom_index);
    EXPECT_TRUE(std::equal(atom.begin(), atom.end(), a[i].clean.begin()));
  }
  for (int c : counts) EXPECT_NEAR(c / 4000.0, 0.25, 0.04);
}

TEST(ForwardCorrupt, SquaredDisplacementMoment) {
  const int d = 100;
  const double sigma = 0.3;
  const auto prior = generate_synthetic(SyntheticKind::two_point, d, 2, 1);
  const auto samples = forward_corrupt(prior, sigma, 100000, 21);
  double sum = 0.0, sq = 0.0;
  for (const auto& s : samples) {
    const double v = vec::distance_sq(s.noisy, s.clean);
    sum += v;
    sq += v * v;
  }
  const double n = samples.size();
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / (n - 1));
  EXPECT_LE(std::abs(mean - sigma * sigma * d), 3.0 * se);
}

TEST(ForwardCorrupt, RadialLawAgainstSimulatedReference) {
  const int d = 20;
  const double sigma = 0.7;
  const auto prior = generate_synthetic(SyntheticKind::two_point, d, 2, 1);
  const auto samples = forward_corrupt(prior, sigma, 100000, 4);
  std::vector<double> observed;
  observed.reserve(samples.size());
  for (const auto& s : samples) observed.push_back(vec::distance_sq(s.noisy, s.clean) / (sigma * sigma));

  // U * chi^2_d drawn with a different engine and distribution family.
  std::minstd_rand eng(12345);
  std::exponential_distribution<double> u(1.0);
  std::chi_squared_distribution<double> chi2(d);
  std::vector<double> reference(1000000);
  for (auto& v : reference) v = u(eng) * chi2(eng);
  EXPECT_LE(ks_two_sample(observed, reference), 0.01);
}

TEST(ReverseSample, SingleAtomSnaps) {
  const int d = 10;
  const auto drift = exact_drift(make_prior(d, Point(d, 0.0)), KernelParams(d, 1.0));
  ModelConfig cfg(KernelParams(d, 1.0));
  cfg.stop_threshold = 1e3;
  cfg.seed = 17;
  const auto runs = reverse_sample_batch(*drift, axis_point(d, {1.0}), cfg, 1000);
  int snapped = 0;
  for (const auto& t : runs) snapped += t.endpoint_snapped == std::optional<std::size_t>(0);
  EXPECT_GE(snapped, 990);
}

TEST(ReverseSample, ZeroDriftIsBrownian) {
  const int d = 4;
  ConstantDrift zero(Point(d, 0.0));
  ModelConfig cfg(KernelParams(d, 1.0));
  cfg.max_steps = 50;
  cfg.dt_max = 0.02;
  cfg.seed = 3;
  const auto runs = reverse_sample_batch(zero, Point(d, 0.0), cfg, 4000);
  double sq = 0.0;
  for (const auto& t : runs) {
    EXPECT_EQ(t.stop_reason, StopReason::step_cap);
    EXPECT_FALSE(t.endpoint_snapped);
    EXPECT_EQ(t.steps, 50u);
    sq += vec::norm_sq(t.endpoint);
  }
  const double var = sq / (runs.size() * d);
  const double expected = 0.02 * 50;
  // Per-coordinate variance estimate over 16000 coordinates: SE = expected * sqrt(2/16000).
  EXPECT_NEAR(var, expected, 4.0 * expected * std::sqrt(2.0 / 16000.0));
}

TEST(ReverseSample, TrajectoryInvariants) {
  const int d = 10;
  const auto drift = exact_drift(make_prior(d, Point(d, 0.0)), KernelParams(d, 1.0));
  ModelConfig cfg(KernelParams(d, 1.0));
  cfg.stop_threshold = 10.0;
  cfg.seed = 5;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const auto t = reverse_sample(*drift, axis_point(d, {1.0}), cfg, k);
    EXPECT_EQ(t.times.front(), 0.0);
    for (std::size_t i = 1; i < t.size(); ++i) {
      EXPECT_GT(t.times[i], t.times[i - 1]);
      EXPECT_GE(t.accumulated_l2sq[i], t.accumulated_l2sq[i - 1]);
    }
    EXPECT_EQ(t.final_l2sq() >= 100.0, t.stop_reason == StopReason::threshold_hit);
  }
}

TEST(ReverseSample, StartOnAtomReturnsImmediately) {
  const int d = 5;
  const auto drift = exact_drift(make_prior(d, Point(d, 0.0)), KernelParams(d, 1.0));
  ModelConfig cfg(KernelParams(d, 1.0));
  const auto t = reverse_sample(*drift, Point(d, 0.0), cfg);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(t.steps, 0u);
  EXPECT_EQ(t.stop_reason, StopReason::singularity_floor);
  EXPECT_EQ(t.endpoint, Point(d, 0.0));
  EXPECT_EQ(t.endpoint_snapped, std::optional<std::size_t>(0));
}

TEST(ReverseSample, TwoPointMatchesPosterior) {
  const int d = 20;
  const KernelParams k(d, 1.0);
  const auto prior = std::make_shared<const EmpiricalPrior>(generate_synthetic(SyntheticKind::two_point, d, 2, 1));
  const Point y0 = axis_point(d, {0.2, 0.9});
  const auto w = posterior_weights(*prior, k, y0);
  ModelConfig cfg(k);
  cfg.seed = 11;
  const auto runs = reverse_sample_batch(*exact_drift(prior, k), y0, cfg, 10000);
  const auto h = snap_histogram(runs, 2);
  EXPECT_NEAR(h[1], w.weight(1), 0.02);
  EXPECT_NEAR(h[0], w.weight(0), 0.02);
}

TEST(ReverseSample, LargerThresholdExtendsPath) {
  const int d = 6;
  const auto drift = exact_drift(make_prior(d, Point(d, 0.0)), KernelParams(d, 1.0));
  ModelConfig lo(KernelParams(d, 1.0));
  lo.snap_radius = 0.0;
  lo.seed = 8;
  lo.stop_threshold = 4.0;
  ModelConfig hi = lo;
  hi.stop_threshold = 8.0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    const auto a = reverse_sample(*drift, axis_point(d, {1.0}), lo, k);
    const auto b = reverse_sample(*drift, axis_point(d, {1.0}), hi, k);
    ASSERT_LE(a.size(), b.size());
    EXPECT_LE(a.duration(), b.duration());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a.times[i], b.times[i]);
      EXPECT_EQ(a.accumulated_l2sq[i], b.accumulated_l2sq[i]);
    }
    EXPECT_TRUE(std::equal(a.points.begin(), a.points.end(), b.points.begin()));
  }
}

TEST(ReverseSample, HalvingDtMaxKeepsHistogram) {
  const int d = 8;
  const KernelParams k(d, 1.0);
  const auto prior = std::make_shared<const EmpiricalPrior>(generate_synthetic(SyntheticKind::two_point, d, 2, 1));
  const auto drift = exact_drift(prior, k);
  const Point y0 = axis_point(d, {0.15, 0.8});
  ModelConfig a(k);
  a.seed = 31;
  ModelConfig b = a;
  b.dt_max = a.dt_max / 2.0;
  const auto ha = snap_histogram(reverse_sample_batch(*drift, y0, a, 10000), 2);
  const auto hb = snap_histogram(reverse_sample_batch(*drift, y0, b, 10000), 2);
  double tv = 0.0;
  for (std::size_t i = 0; i < ha.size(); ++i) tv += 0.5 * std::abs(ha[i] - hb[i]);
  EXPECT_LE(tv, 0.02);
}

TEST(ReverseSample, AccumulatedIntegralBlowsUpNearEnd) {
  const int d = 10;
  const auto drift = exact_drift(make_prior(d, Point(d, 0.0)), KernelParams(d, 1.0));
  ModelConfig cfg(KernelParams(d, 1.0));
  cfg.stop_threshold = 10.0;
  cfg.snap_radius = 1e-9;
  cfg.seed = 2;
  int checked = 0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto t = reverse_sample(*drift, axis_point(d, {1.0}), cfg, k);
    if (t.stop_reason != StopReason::threshold_hit) continue;
    ++checked;
    auto acc_at = [&](double s) {
      const auto it = std::upper_bound(t.times.begin(), t.times.end(), s);
      const std::size_t i = static_cast<std::size_t>(it - t.times.begin()) - 1;
      if (i + 1 >= t.size()) return t.accumulated_l2sq.back();
      const double f = (s - t.times[i]) / (t.times[i + 1] - t.times[i]);
      return t.accumulated_l2sq[i] + f * (t.accumulated_l2sq[i + 1] - t.accumulated_l2sq[i]);
    };
    const double T = t.duration();
    EXPECT_GT(acc_at(T) - acc_at(0.75 * T), acc_at(0.25 * T) - acc_at(0.0)) << "run " << k;
  }
  EXPECT_GE(checked, 40);
}

TEST(ReverseSample, BatchIndependentOfJobs) {
  const int d = 8;
  const KernelParams k(d, 1.0);
  const auto prior = std::make_shared<const EmpiricalPrior>(generate_synthetic(SyntheticKind::sphere_shell, d, 5, 4));
  const auto drift = exact_drift(prior, k);
  ModelConfig cfg(k);
  cfg.seed = 77;
  const Point y0 = axis_point(d, {0.1, 0.2, 0.3});
  const auto a = reverse_sample_batch(*drift, y0, cfg, 40, 1, PathRecording::full);
  const auto b = reverse_sample_batch(*drift, y0, cfg, 40, 3, PathRecording::full);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(encode_trajectory(a[i]), encode_trajectory(b[i]));
}

TEST(TrajectoryIo, CsvAndBinaryRoundTrip) {
  const int d = 3;
  const auto drift = exact_drift(make_prior(d, {1, 0, 0, -1, 0, 0}), KernelParams(d, 1.0));
  ModelConfig cfg(KernelParams(d, 1.0));
  cfg.max_steps = 5;
  const auto t = reverse_sample(*drift, Point{0.1, 0.4, 0.0}, cfg);
  const auto back = decode_trajectory(encode_trajectory(t));
  EXPECT_EQ(back.times, t.times);
  EXPECT_EQ(back.points, t.points);
  EXPECT_EQ(back.accumulated_l2sq, t.accumulated_l2sq);
  EXPECT_EQ(back.stop_reason, t.stop_reason);
  EXPECT_EQ(back.endpoint, t.endpoint);
  EXPECT_EQ(back.endpoint_snapped, t.endpoint_snapped);
  EXPECT_EQ(back.steps, t.steps);

  std::ostringstream csv;
  write_trajectory_csv(t, csv);
  const std::string s = csv.str();
  EXPECT_EQ(s.rfind("s,y0,y1,y2,accumulated_l2sq\r\n0,0.1,0.4,0,0\r\n", 0), 0u) << s;
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), t.size() + 1);

  auto bytes = encode_trajectory(t);
  bytes[4] = 9;
  EXPECT_THROW(decode_trajectory(bytes), FormatError);
  bytes = encode_trajectory(t);
  bytes.resize(bytes.size() - 1);
  EXPECT_THROW(decode_trajectory(bytes), FormatError);
}

TEST(ExpTimeIdentity, IdentityProcess) {
  const auto rep = exp_time_identity_check(
      [](Rng&, std::size_t steps, double h) {
        std::vector<double> p(steps + 1);
        for (std::size_t k = 0; k <= steps; ++k) p[k] = k * h;
        return p;
      },
      1.0, 50.0, 20000, 0.01, 1);
  EXPECT_TRUE(rep.agree) << rep.z_score;
  EXPECT_NEAR(rep.lhs_mean, 1.0, 4.0 * rep.lhs_se);
  EXPECT_NEAR(rep.rhs_mean, 1.0, 4.0 * rep.rhs_se);
}

TEST(ExpTimeIdentity, ConstantProcess) {
  const auto rep = exp_time_identity_check(
      [](Rng&, std::size_t steps, double) { return std::vector<double>(steps + 1, 1.0); }, 3.0, 20.0, 5000, 0.01, 2);
  EXPECT_EQ(rep.lhs_mean, 1.0);
  EXPECT_NEAR(rep.rhs_mean, 1.0, 4.0 * rep.rhs_se + 1e-3);
  EXPECT_TRUE(rep.agree);
}

TEST(ExpTimeIdentity, SquaredBrownianNorm) {
  const auto rep = exp_time_identity_check(
      [](Rng& rng, std::size_t steps, double h) {
        std::normal_distribution<double> n;
        double w[3] = {0, 0, 0};
        std::vector<double> p(steps + 1, 0.0);
        for (std::size_t k = 1; k <= steps; ++k) {
          for (double& c : w) c += std::sqrt(h) * n(rng);
          p[k] = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
        }
        return p;
      },
      2.0, 20.0, 20000, 0.005, 3);
  EXPECT_TRUE(rep.agree) << rep.z_score;
  EXPECT_NEAR(rep.lhs_mean, 1.5, 4.0 * rep.lhs_se);
}

TEST(ExpTimeIdentity, RejectsBadArguments) {
  auto one = [](Rng&, std::size_t steps, double) { return std::vector<double>(steps + 1, 1.0); };
  EXPECT_THROW(exp_time_identity_check(one, 0.0, 1.0, 10, 0.1, 1), InvalidParameter);
  EXPECT_THROW(exp_time_identity_check(one, 1.0, 1.0, 1, 0.1, 1), InvalidParameter);
  EXPECT_THROW(exp_time_identity_check([](Rng&, std::size_t, double) { return std::vector<double>(1); }, 1.0, 1.0,
                                       10, 0.1, 1),
               DimensionMismatch);
}
