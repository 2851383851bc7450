#pragma once

// Self-contained accuracy audit of the Bessel evaluator: half-integer closed
// forms, reference values frozen from a 50-digit evaluation
// (tools/oracle/freeze_values.py), the three-term recurrence between
// independent evaluations, and monotonicity in order and argument.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "polar_denoise/specfun.hpp"

namespace polar_denoise::audit {

struct AuditRow {
  std::string check;
  double order = 0.0;
  double argument = 0.0;
  double value = 0.0;
  double reference = 0.0;
  double error = 0.0;  // |value - reference| / max(1, |reference|)
  double tolerance = 0.0;
  bool passed = false;
};

inline double scaled_error(double value, double reference) {
  return std::abs(value - reference) / std::max(1.0, std::abs(reference));
}

/// log K_{n+1/2}(z) for n <= 3 from the terminating closed forms.
inline double log_half_integer_closed_form(int n, double z) {
  const double base = 0.5 * std::log(std::numbers::pi / (2.0 * z)) - z;
  const double w = 1.0 / z;
  double poly = 1.0;
  switch (n) {
    case 0: poly = 1.0; break;
    case 1: poly = 1.0 + w; break;
    case 2: poly = 1.0 + 3.0 * w + 3.0 * w * w; break;
    case 3: poly = 1.0 + 6.0 * w + 15.0 * w * w + 15.0 * w * w * w; break;
    default: throw DomainError("log_half_integer_closed_form: n must be in 0..3");
  }
  return base + std::log(poly);
}

struct FrozenValue {
  double order;
  double argument;
  double log_k;
};

// 50-digit reference values, rounded to double.
inline constexpr FrozenValue kFrozenLogK[] = {
    {500.0, 10.0, 1799.653649283494824410448},
    {2000.0, 1.0, 14584.52453693106799591309},
    {10000.0, 1e-8, 273237.3035943849251429512},
    {0.5, 1e5, -100005.5306713798403867777},
    {0.0, 3.0, -3.359877784641719629766572},
    {1.0, 0.5, 0.5046713973046511773084168},
};

struct FrozenRatio {
  double order;
  double argument;
  double ratio;
};

inline constexpr FrozenRatio kFrozenRatio[] = {
    {0.0, 1.0, 1.429625398260401758028108},
    {199.0, 1.0, 398.0025252363404348653223},
};

inline std::vector<AuditRow> run_specfun_audit() {
  std::vector<AuditRow> rows;
  auto push = [&](std::string check, double nu, double z, double value, double ref, double tol) {
    const double err = scaled_error(value, ref);
    rows.push_back({std::move(check), nu, z, value, ref, err, tol, err <= tol});
  };

  for (int n = 0; n <= 3; ++n) {
    for (double z : {0.1, 1.0, 10.0, 100.0}) {
      push("closed_form", n + 0.5, z, specfun::log_bessel_k(n + 0.5, z), log_half_integer_closed_form(n, z), 1e-12);
    }
  }
  for (const auto& f : kFrozenLogK) {
    push("frozen_log_k", f.order, f.argument, specfun::log_bessel_k(f.order, f.argument), f.log_k, 1e-10);
  }
  for (const auto& f : kFrozenRatio) {
    push("frozen_ratio", f.order, f.argument, specfun::bessel_k_ratio(f.order, f.argument), f.ratio, 1e-10);
  }
  // K_{nu+1} = K_{nu-1} + (2 nu / z) K_nu, rearranged as
  // log K_{nu+1} = log K_nu + log(exp(log K_{nu-1} - log K_nu) + 2 nu / z).
  for (double nu : {1.0, 7.5, 40.0, 350.0, 3000.0}) {
    for (double z : {0.01, 2.5, 80.0}) {
      const double lm = specfun::log_bessel_k(nu - 1.0, z);
      const double l0 = specfun::log_bessel_k(nu, z);
      const double lp = specfun::log_bessel_k(nu + 1.0, z);
      push("recurrence", nu, z, lp, l0 + std::log(std::exp(lm - l0) + 2.0 * nu / z), 1e-12);
    }
  }
  // Strictly increasing in nu, strictly decreasing in z.
  for (double z : {0.5, 20.0, 1000.0}) {
    bool ok = true;
    double prev = specfun::log_bessel_k(0.0, z);
    for (int nu = 1; nu <= 64; ++nu) {
      const double cur = specfun::log_bessel_k(nu, z);
      ok = ok && cur > prev;
      prev = cur;
    }
    rows.push_back({"monotone_in_order", 64.0, z, ok ? 1.0 : 0.0, 1.0, ok ? 0.0 : 1.0, 0.0, ok});
  }
  for (double nu : {0.0, 12.5, 900.0}) {
    bool ok = true;
    double prev = specfun::log_bessel_k(nu, 1e-3);
    for (double z = 2e-3; z < 5e3; z *= 1.7) {
      const double cur = specfun::log_bessel_k(nu, z);
      ok = ok && cur < prev;
      prev = cur;
    }
    rows.push_back({"monotone_in_argument", nu, 5e3, ok ? 1.0 : 0.0, 1.0, ok ? 0.0 : 1.0, 0.0, ok});
  }
  return rows;
}

}  // namespace polar_denoise::audit
