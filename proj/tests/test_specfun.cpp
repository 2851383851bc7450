#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "oracle/bessel_oracle.hpp"
#include "polar_denoise/audit.hpp"
#include "polar_denoise/specfun.hpp"

namespace sf = polar_denoise::specfun;
using polar_denoise::DomainError;
using polar_denoise::RangeError;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(LogBesselK, HalfOrderAtOne) {
  EXPECT_NEAR(sf::log_bessel_k(0.5, 1.0), 0.5 * std::log(std::numbers::pi / 2.0) - 1.0, 1e-14);
}

TEST(LogBesselK, ThreeHalvesAtTwo) {
  const double expected = std::log(std::sqrt(std::numbers::pi / 4.0) * std::exp(-2.0) * 1.5);
  EXPECT_NEAR(sf::log_bessel_k(1.5, 2.0), expected, 1e-14);
}

TEST(LogBesselK, FrozenReferenceOrder500) {
  // 50-digit value from tools/oracle/freeze_values.py
  EXPECT_LT(rel(sf::log_bessel_k(500.0, 10.0), 1799.653649283494824410448), 1e-10);
}

TEST(LogBesselK, HalfIntegerClosedForms) {
  for (int n = 0; n <= 3; ++n) {
    for (double z : {0.1, 1.0, 10.0, 100.0}) {
      EXPECT_LT(rel(sf::log_bessel_k(n + 0.5, z), polar_denoise::audit::log_half_integer_closed_form(n, z)), 1e-12)
          << "nu=" << n + 0.5 << " z=" << z;
    }
  }
}

TEST(LogBesselK, MatchesOracleOnGrid) {
  for (double nu : {0.0, 1.0, 2.5, 10.0, 49.5, 199.0, 1000.0, 9999.5}) {
    for (double z : {1e-8, 1e-3, 0.5, 1.999, 2.001, 7.0, 150.0, 3e3, 1e5}) {
      EXPECT_LT(rel(sf::log_bessel_k(nu, z), oracle::log_bessel_k(nu, z)), 1e-10) << "nu=" << nu << " z=" << z;
    }
  }
}

TEST(LogBesselK, FiniteAcrossDomainCorners) {
  for (double nu : {0.0, 0.5, 1e4}) {
    for (double z : {1e-8, 1e5}) EXPECT_TRUE(std::isfinite(sf::log_bessel_k(nu, z)));
  }
}

TEST(LogBesselK, DomainErrors) {
  EXPECT_THROW(sf::log_bessel_k(1.0, 0.0), DomainError);
  EXPECT_THROW(sf::log_bessel_k(1.0, -2.0), DomainError);
  EXPECT_THROW(sf::log_bessel_k(-1.0, 2.0), DomainError);
  EXPECT_THROW(sf::log_bessel_k(0.3, 2.0), DomainError);
}

TEST(LogBesselK, RangeErrorNamesArguments) {
  try {
    sf::log_bessel_k(20000.0, 1.0);
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("nu=20000"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("z=1"), std::string::npos);
  }
  EXPECT_THROW(sf::log_bessel_k(2.0, 1e-9), RangeError);
  EXPECT_THROW(sf::log_bessel_k(2.0, 2e5), RangeError);
}

TEST(BesselKRatio, HalfOrder) { EXPECT_NEAR(sf::bessel_k_ratio(0.5, 3.0), 4.0 / 3.0, 1e-15); }

TEST(BesselKRatio, OrderZeroAtOne) { EXPECT_LT(rel(sf::bessel_k_ratio(0.0, 1.0), 1.429625398260401758028108), 1e-8); }

TEST(BesselKRatio, LargeOrderNearTwoNuOverZ) {
  const double r = sf::bessel_k_ratio(199.0, 1.0);
  EXPECT_NEAR(r / 398.0, 1.0, 0.01);
  EXPECT_LT(rel(r, 398.0025252363404348653223), 1e-8);
}

TEST(BesselKRatio, MatchesOracle) {
  for (double nu : {0.0, 0.5, 3.0, 31.0, 499.5, 5000.0}) {
    for (double z : {1e-6, 0.3, 4.0, 90.0, 4e4}) {
      const double ref = oracle::bessel_k_ratio(nu, z);
      EXPECT_LT(std::abs(sf::bessel_k_ratio(nu, z) - ref) / ref, 1e-8) << "nu=" << nu << " z=" << z;
    }
  }
}

TEST(BesselKRatio, LowerBounds) {
  for (double nu : {0.0, 0.5, 2.0, 77.5, 3000.0}) {
    for (double z : {1e-7, 0.01, 1.0, 25.0, 1e4}) {
      const double r = sf::bessel_k_ratio(nu, z);
      EXPECT_GT(r, 1.0);
      EXPECT_GE(r, 2.0 * nu / z * (1.0 - 1e-15));
    }
  }
}

TEST(BesselKRecurrence, ScaledIdentity) {
  // K_{nu+1} = K_{nu-1} + (2 nu / z) K_nu, divided through by K_{nu+1}.
  for (double nu : {1.0, 1.5, 12.0, 200.5, 4000.0}) {
    for (double z : {0.02, 1.0, 30.0, 800.0}) {
      const double lm = sf::log_bessel_k(nu - 1.0, z);
      const double l0 = sf::log_bessel_k(nu, z);
      const double lp = sf::log_bessel_k(nu + 1.0, z);
      const double rhs = std::exp(lm - lp) + 2.0 * nu / z * std::exp(l0 - lp);
      EXPECT_NEAR(rhs, 1.0, 1e-8) << "nu=" << nu << " z=" << z;
    }
  }
}

TEST(BesselKMonotonicity, ZToTheNuTimesKDecreasing) {
  for (double nu : {0.0, 0.5, 4.0, 60.0, 2500.0}) {
    // Near z = 0 the function is flat below double resolution; the sum of two large logs
    // then wobbles by a few ulps of its terms.
    const double first = nu * std::log(1e-6) + sf::log_bessel_k(nu, 1e-6);
    double prev = first;
    for (double z = 2e-6; z <= 1e5; z *= 1.9) {
      const double lk = sf::log_bessel_k(nu, z);
      const double cur = nu * std::log(z) + lk;
      const double slack = 16.0 * std::numeric_limits<double>::epsilon() * (std::abs(nu * std::log(z)) + std::abs(lk));
      EXPECT_LE(cur, prev + slack) << "nu=" << nu << " z=" << z;
      if (z > 1.0) {
        EXPECT_LT(cur, prev) << "nu=" << nu << " z=" << z;
      }
      prev = cur;
    }
    EXPECT_LT(prev, first - 1.0);
  }
}

TEST(BesselKDerivative, FiniteDifferenceIdentity) {
  // d/dz (z^-nu K_nu(z)) = -z^-nu K_{nu+1}(z)
  for (double nu : {0.5, 3.0, 10.0}) {
    for (double z : {0.7, 2.0, 5.0}) {
      const double h = 1e-5 * z;
      auto f = [&](double t) { return std::exp(-nu * std::log(t) + sf::log_bessel_k(nu, t)); };
      const double fd = (f(z + h) - f(z - h)) / (2.0 * h);
      const double exact = -std::exp(-nu * std::log(z) + sf::log_bessel_k(nu + 1.0, z));
      EXPECT_LT(std::abs(fd - exact) / std::abs(exact), 1e-5) << "nu=" << nu << " z=" << z;
    }
  }
}

TEST(LargeOrder, DirectFormula) {
  const double expected = 0.5 * std::log(std::numbers::pi / 2000.0) + 1000.0 * std::log(2000.0 / std::numbers::e);
  EXPECT_NEAR(sf::log_bessel_k_large_order(1000.0, 1.0), expected, 1e-9);
}

TEST(LargeOrder, AgreesAtOrder2000) {
  const double exact = sf::log_bessel_k(2000.0, 1.0);
  EXPECT_LE(std::abs(exact - sf::log_bessel_k_large_order(2000.0, 1.0)) / std::abs(exact), 1e-3);
}

TEST(LargeOrder, OutOfRegimeIsOnlyApproximate) {
  // nu = 50, z = 40 is outside z = o(nu); the two disagree visibly.
  const double exact = sf::log_bessel_k(50.0, 40.0);
  const double approx = sf::log_bessel_k_large_order(50.0, 40.0);
  EXPECT_GT(std::abs(exact - approx), 1.0);
}

TEST(Audit, AllChecksPass) {
  const auto rows = polar_denoise::audit::run_specfun_audit();
  EXPECT_GT(rows.size(), 40u);
  for (const auto& r : rows) EXPECT_TRUE(r.passed) << r.check << " nu=" << r.order << " z=" << r.argument;
}
