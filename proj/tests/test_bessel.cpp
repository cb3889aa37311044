#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "magi/bessel.hpp"
#include "oracles.hpp"

namespace {

// Closed forms at half-integer order, for validating the oracle itself:
//   K_{1/2}(z) = sqrt(pi/(2z)) e^{-z}
//   K_{3/2}(z) = sqrt(pi/(2z)) e^{-z} (1 + 1/z)
//   K_{5/2}(z) = sqrt(pi/(2z)) e^{-z} (1 + 3/z + 3/z^2)
double k_half(int twice_nu, double z) {
  const double base = std::sqrt(std::numbers::pi / (2.0 * z)) * std::exp(-z);
  switch (twice_nu) {
    case 1: return base;
    case 3: return base * (1.0 + 1.0 / z);
    case 5: return base * (1.0 + 3.0 / z + 3.0 / (z * z));
    default: throw std::invalid_argument("unsupported half-integer order");
  }
}

std::vector<double> log_spaced(double lo, double hi, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i)
    v[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return v;
}

}  // namespace

TEST_SUITE("bessel") {

TEST_CASE("oracle matches half-integer closed forms") {
  for (double z : log_spaced(2e-6, 100.0, 60)) {
    for (int tn : {1, 3, 5}) {
      const double exact = k_half(tn, z);
      const double quad = oracle::besselk(tn / 2.0, z);
      CHECK(std::abs(quad - exact) <= 1e-14 * exact);
    }
  }
}

TEST_CASE("oracle methods agree with each other off the half-integers") {
  // Quadrature vs. reflection series on their overlap; the two methods share
  // no code and no algorithm. Above z ~ 6 the reflection series loses to
  // cancellation (~e^{2z} * long-double eps), so the overlap stops there.
  for (double z : log_spaced(1e-5, 6.0, 40)) {
    for (double nu : {0.01, 0.3, 1.01, 1.7, 2.01, 2.3}) {
      const long double quad = oracle::besselk_quadrature(nu, z);
      const long double refl = oracle::besselk_reflection(nu, z);
      CHECK(std::abs(static_cast<double>(quad - refl)) <=
            1e-11 * static_cast<double>(quad));
    }
  }
}

TEST_CASE("oracle satisfies the three-term recurrence") {
  // K_{nu+1}(z) = K_{nu-1}(z) + (2 nu / z) K_nu(z)
  for (double z : {0.001, 0.5, 2.0, 7.0, 30.0, 95.0}) {
    for (double nu : {0.7, 1.01, 2.01}) {
      const double lhs = oracle::besselk(nu + 1.0, z);
      const double rhs = oracle::besselk(nu - 1.0, z) + 2.0 * nu / z * oracle::besselk(nu, z);
      CHECK(std::abs(lhs - rhs) <= 1e-13 * lhs);
    }
  }
}

TEST_CASE("besselk matches the oracle to 1e-13 across all regimes") {
  // Covers the series (z<=2), continued-fraction (2<z<17) and asymptotic
  // (z>=17) branches, including points straddling the switchovers.
  std::vector<double> zs = log_spaced(2e-6, 100.0, 120);
  for (double z : {1.999, 2.0, 2.001, 16.999, 17.0, 17.001}) zs.push_back(z);
  for (double z : zs) {
    for (double nu : {0.01, 0.49, 0.5, 1.01, 2.01, 2.5, 3.3}) {
      const double exact = oracle::besselk(nu, z);
      const double got = magi::besselk(nu, z);
      CHECK(std::abs(got - exact) <= 1e-13 * exact);
    }
  }
}

TEST_CASE("besselk_three returns consistent orders") {
  // The shifted orders are formed as nu-1.0 and nu-2.0 (not as fresh decimal
  // literals), so both sides see bit-identical order arguments.
  const double nu = 2.01;
  for (double z : {1e-4, 0.8, 5.0, 40.0}) {
    const auto [k2, k1, k0] = magi::besselk_three(nu, z);
    CHECK(k2 == doctest::Approx(magi::besselk(nu, z)).epsilon(1e-14));
    CHECK(k1 == doctest::Approx(magi::besselk(nu - 1.0, z)).epsilon(1e-14));
    CHECK(k0 == doctest::Approx(magi::besselk(nu - 2.0, z)).epsilon(1e-14));
  }
}

TEST_CASE("besselk agrees with the standard library at loose tolerance") {
  // Third opinion; std::cyl_bessel_k is independent of both our code and the
  // oracle but is not accurate enough to arbitrate at 1e-13.
  for (double z : log_spaced(1e-4, 50.0, 30)) {
    const double got = magi::besselk(2.01, z);
    const double ref = std::cyl_bessel_k(2.01, z);
    CHECK(std::abs(got - ref) <= 1e-9 * ref);
  }
}

TEST_CASE("besselk rejects non-positive argument") {
  CHECK_THROWS(magi::besselk(2.01, 0.0));
  CHECK_THROWS(magi::besselk(2.01, -1.0));
}

}  // TEST_SUITE
