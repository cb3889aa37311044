#include <doctest.h>

#include <armadillo>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "magi/hmc.hpp"

namespace {

using magi::Bounds;
using magi::ChainRecord;
using magi::HmcConfig;
using magi::LeapfrogResult;
using magi::LogTargetFn;
using magi::Rng;
using magi::WindowStats;

Bounds unbounded(arma::uword dim) {
  return {arma::vec(dim, arma::fill::value(-arma::datum::inf)),
          arma::vec(dim, arma::fill::value(arma::datum::inf))};
}

// log N(0, diag(var)) up to a constant, with gradient.
LogTargetFn diag_normal_target(arma::vec var) {
  return [var = std::move(var)](const arma::vec& q, arma::vec& grad) {
    grad = -q / var;
    return -0.5 * arma::dot(q, q / var);
  };
}

double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Two-sided Kolmogorov-Smirnov distance between the sample ECDF and the
// standard normal CDF.
double ks_vs_std_normal(arma::vec s) {
  s = arma::sort(s);
  const double n = static_cast<double>(s.n_elem);
  double d = 0.0;
  for (arma::uword i = 0; i < s.n_elem; ++i) {
    const double cdf = std_normal_cdf(s(i));
    d = std::max(d, (static_cast<double>(i) + 1.0) / n - cdf);
    d = std::max(d, cdf - static_cast<double>(i) / n);
  }
  return d;
}

}  // namespace

TEST_SUITE("hmc") {

TEST_CASE("rng: deterministic stream with correct ranges") {
  Rng a(123), b(123);
  for (int i = 0; i < 500; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double v = a.uniform_open();
    CHECK(v == b.uniform_open());
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
    CHECK(a.normal() == b.normal());
  }
  // A different seed gives a different stream.
  Rng c(124);
  int same = 0;
  Rng a2(123);
  for (int i = 0; i < 100; ++i) same += (a2.uniform() == c.uniform());
  CHECK(same < 5);
}

TEST_CASE("rng: normal moments") {
  Rng rng(2024);
  const arma::uword n = 200000;
  const arma::vec draws = rng.normal_vec(n);
  CHECK(std::abs(arma::mean(draws)) < 0.01);
  CHECK(arma::var(draws) == doctest::Approx(1.0).epsilon(0.02));
  // Box-Muller caching must not duplicate values pairwise.
  CHECK(draws(0) != draws(1));
}

TEST_CASE("leapfrog: one hand-checked step on the harmonic oscillator") {
  // U(q) = q^2/2, q0 = 1, p0 = 0, eps = 0.1, one step:
  //   p~  = 0 - 0.05 * 1      = -0.05
  //   q*  = 1 + 0.1 * (-0.05) = 0.995
  //   p*  = -0.05 - 0.05 * 0.995 = -0.09975
  const auto grad_u = [](const arma::vec& q) { return arma::vec(q); };
  const LeapfrogResult r =
      magi::leapfrog(arma::vec{1.0}, arma::vec{0.0}, arma::vec{0.1}, 1, grad_u,
                     unbounded(1));
  REQUIRE(r.valid);
  CHECK(r.q(0) == doctest::Approx(0.995).epsilon(1e-14));
  CHECK(r.p(0) == doctest::Approx(-0.09975).epsilon(1e-14));
}

TEST_CASE("leapfrog: vanishing step size is the identity") {
  const auto grad_u = [](const arma::vec& q) { return arma::vec(q); };
  const arma::vec q0{1.3, -0.7};
  const arma::vec p0{0.4, 2.1};
  const LeapfrogResult r = magi::leapfrog(
      q0, p0, arma::vec{1e-12, 1e-12}, 5, grad_u, unbounded(2));
  REQUIRE(r.valid);
  CHECK(arma::abs(r.q - q0).max() < 1e-9);
  CHECK(arma::abs(r.p - p0).max() < 1e-9);
}

TEST_CASE("leapfrog: reflection mirrors about the bound and flips momentum") {
  // Zero potential: momentum only changes via reflections.
  const auto flat = [](const arma::vec& q) {
    return arma::vec(q.n_elem, arma::fill::zeros);
  };

  SUBCASE("single bounce off a lower bound") {
    Bounds half_line{arma::vec{0.0}, arma::vec{arma::datum::inf}};
    // Drift lands at 0.2 - 0.5 = -0.3, which mirrors to +0.3.
    const LeapfrogResult r = magi::leapfrog(
        arma::vec{0.2}, arma::vec{-1.0}, arma::vec{0.5}, 1, flat, half_line);
    REQUIRE(r.valid);
    CHECK(r.q(0) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(r.p(0) == doctest::Approx(1.0).epsilon(1e-14));
  }

  SUBCASE("multiple bounces inside a narrow box") {
    Bounds box{arma::vec{0.0}, arma::vec{1.0}};
    // Raw drift 0.5 + 3.7 = 4.2 folds back to 0.2 after four bounces, so the
    // momentum's sign is restored and its magnitude untouched.
    const LeapfrogResult r = magi::leapfrog(
        arma::vec{0.5}, arma::vec{3.7}, arma::vec{1.0}, 1, flat, box);
    REQUIRE(r.valid);
    CHECK(r.q(0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(r.p(0) == doctest::Approx(3.7).epsilon(1e-14));
    CHECK(std::abs(r.p(0)) == doctest::Approx(3.7).epsilon(1e-14));
  }
}

TEST_CASE("leapfrog: bounded paths stay inside and are time-reversible") {
  const auto grad_u = [](const arma::vec& q) { return arma::vec(q); };
  Bounds box{arma::vec{0.0, -1.0}, arma::vec{2.0, 1.0}};
  const arma::vec q0{0.3, -0.9};
  const arma::vec p0{1.7, 0.8};
  const arma::vec eps{0.3, 0.11};

  const LeapfrogResult fwd = magi::leapfrog(q0, p0, eps, 9, grad_u, box);
  REQUIRE(fwd.valid);
  CHECK(fwd.q(0) >= 0.0);
  CHECK(fwd.q(0) <= 2.0);
  CHECK(fwd.q(1) >= -1.0);
  CHECK(fwd.q(1) <= 1.0);

  // Integrating back from (q*, -p*) must recover (q0, -p0) exactly (up to
  // floating-point noise): reflection does not break reversibility.
  const LeapfrogResult back =
      magi::leapfrog(fwd.q, -fwd.p, eps, 9, grad_u, box);
  REQUIRE(back.valid);
  CHECK(arma::abs(back.q - q0).max() < 1e-10);
  CHECK(arma::abs(back.p + p0).max() < 1e-10);
}

TEST_CASE("leapfrog: energy error scales as eps^2") {
  const auto grad_u = [](const arma::vec& q) { return arma::vec(q); };
  const auto energy = [](double q, double p) {
    return 0.5 * q * q + 0.5 * p * p;
  };
  const double h0 = energy(1.0, 0.0);
  // Fixed trajectory length T = 0.8, halving eps each time.
  const arma::vec epses{0.08, 0.04, 0.02, 0.01};
  arma::vec log_eps(epses.n_elem), log_err(epses.n_elem);
  for (arma::uword i = 0; i < epses.n_elem; ++i) {
    const double eps = epses(i);
    const auto n_steps = static_cast<arma::uword>(std::lround(0.8 / eps));
    const LeapfrogResult r =
        magi::leapfrog(arma::vec{1.0}, arma::vec{0.0}, arma::vec{eps}, n_steps,
                       grad_u, unbounded(1));
    REQUIRE(r.valid);
    log_eps(i) = std::log(eps);
    log_err(i) = std::log(std::abs(energy(r.q(0), r.p(0)) - h0));
  }
  const arma::vec x = log_eps - arma::mean(log_eps);
  const double slope = arma::dot(x, log_err - arma::mean(log_err)) /
                       arma::dot(x, x);
  CHECK(slope > 1.7);
  CHECK(slope < 2.3);
}

TEST_CASE("leapfrog: non-finite gradients invalidate the result") {
  const auto bad = [](const arma::vec& q) {
    return arma::vec(q.n_elem, arma::fill::value(arma::datum::nan));
  };
  const LeapfrogResult r = magi::leapfrog(
      arma::vec{1.0}, arma::vec{0.5}, arma::vec{0.1}, 3, bad, unbounded(1));
  CHECK_FALSE(r.valid);
}

TEST_CASE("leapfrog: argument validation") {
  const auto grad_u = [](const arma::vec& q) { return arma::vec(q); };
  CHECK_THROWS_AS(magi::leapfrog(arma::vec{1.0, 2.0}, arma::vec{0.0},
                                 arma::vec{0.1, 0.1}, 1, grad_u, unbounded(2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(magi::leapfrog(arma::vec{1.0}, arma::vec{0.0},
                                 arma::vec{0.0}, 1, grad_u, unbounded(1)),
                  std::invalid_argument);
}

TEST_CASE("hmc_iteration: tiny steps accept and report the target value") {
  const LogTargetFn target = diag_normal_target(arma::vec{1.0, 1.0});
  Rng rng(99);
  arma::vec q{0.3, -0.4};
  const arma::vec eps{1e-3, 1e-3};
  int accepted = 0;
  for (int it = 0; it < 50; ++it) {
    const magi::IterationResult r =
        magi::hmc_iteration(q, eps, 3, target, unbounded(2), rng);
    accepted += r.accepted;
    arma::vec g(2);
    CHECK(r.lp == doctest::Approx(target(r.q, g)).epsilon(1e-12));
    q = r.q;
  }
  CHECK(accepted == 50);
}

TEST_CASE("hmc_iteration: rejects invalid proposals, throws on bad state") {
  // A target that is finite at the start but NaN elsewhere: every proposal is
  // invalid, so the iteration must return the unmoved state.
  const arma::vec q0{0.5};
  const LogTargetFn spiky = [&q0](const arma::vec& q, arma::vec& grad) {
    grad.zeros();
    return (std::abs(q(0) - q0(0)) < 1e-14) ? 0.0 : arma::datum::nan;
  };
  Rng rng(1);
  const magi::IterationResult r =
      magi::hmc_iteration(q0, arma::vec{0.5}, 5, spiky, unbounded(1), rng);
  CHECK_FALSE(r.accepted);
  CHECK(r.q(0) == q0(0));

  const LogTargetFn nan_target = [](const arma::vec&, arma::vec& grad) {
    grad.zeros();
    return arma::datum::nan;
  };
  Rng rng2(2);
  CHECK_THROWS_AS(magi::hmc_iteration(q0, arma::vec{0.5}, 5, nan_target,
                                      unbounded(1), rng2),
                  std::invalid_argument);
}

TEST_CASE("tune_step_sizes") {
  SUBCASE("high acceptance grows every step size by 1.2") {
    WindowStats s;
    s.accept_rate = 1.0;  // no usable SDs supplied
    const arma::vec out = magi::tune_step_sizes(s, arma::vec{0.1, 0.2});
    CHECK(out(0) == doctest::Approx(0.12).epsilon(1e-14));
    CHECK(out(1) == doctest::Approx(0.24).epsilon(1e-14));
  }

  SUBCASE("low acceptance shrinks by 0.8") {
    WindowStats s;
    s.accept_rate = 0.3;
    const arma::vec out = magi::tune_step_sizes(s, arma::vec{0.1});
    CHECK(out(0) == doctest::Approx(0.08).epsilon(1e-14));
  }

  SUBCASE("mid-band acceptance with equal SDs leaves eps unchanged") {
    WindowStats s;
    s.accept_rate = 0.75;
    s.coordinate_sd = arma::vec{2.0, 2.0};
    const arma::vec out = magi::tune_step_sizes(s, arma::vec{0.1, 0.1});
    CHECK(out(0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(out(1) == doctest::Approx(0.1).epsilon(1e-12));
  }

  SUBCASE("SD reshape preserves the geometric mean") {
    WindowStats s;
    s.accept_rate = 0.75;
    s.coordinate_sd = arma::vec{1.0, 4.0};
    const arma::vec out = magi::tune_step_sizes(s, arma::vec{1.0, 1.0});
    CHECK(out(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out(1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(out(0) * out(1) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("degenerate SDs skip the reshape but keep the global factor") {
    WindowStats s;
    s.accept_rate = 0.95;
    s.coordinate_sd = arma::vec{0.0, 1.0};  // a frozen coordinate
    const arma::vec out = magi::tune_step_sizes(s, arma::vec{0.1, 0.1});
    CHECK(out(0) == doctest::Approx(0.12).epsilon(1e-14));
    CHECK(out(1) == doctest::Approx(0.12).epsilon(1e-14));
  }
}

TEST_CASE("run_chain: record shapes, burn-in arithmetic, trace consistency") {
  HmcConfig cfg;
  cfg.n_iter = 10000;
  cfg.n_leapfrog = 2;
  cfg.burnin_ratio = 0.5;
  cfg.step_factor = arma::vec{0.5};
  cfg.seed = 17;
  const LogTargetFn target = diag_normal_target(arma::vec{1.0});
  const ChainRecord rec =
      magi::run_chain(arma::vec{0.0}, cfg, target, unbounded(1));

  CHECK(rec.positions.n_rows == 5000);
  CHECK(rec.positions.n_cols == 1);
  CHECK(rec.lp_trace.n_elem == 5000);
  CHECK(rec.accept_rate_history.n_elem == 100);
  CHECK(rec.accept_rate_history.min() >= 0.0);
  CHECK(rec.accept_rate_history.max() <= 1.0);
  REQUIRE(rec.final_eps.n_elem == 1);
  CHECK(rec.final_eps(0) > 0.0);
  CHECK(std::isfinite(rec.final_eps(0)));

  // The stored log-target trace must match the stored positions.
  double worst = 0.0;
  for (arma::uword i = 0; i < rec.lp_trace.n_elem; ++i) {
    const double lp = -0.5 * rec.positions(i, 0) * rec.positions(i, 0);
    worst = std::max(worst, std::abs(lp - rec.lp_trace(i)));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("run_chain: same seed gives a bit-identical record") {
  HmcConfig cfg;
  cfg.n_iter = 400;
  cfg.n_leapfrog = 10;
  cfg.step_factor = arma::vec{0.3};
  cfg.seed = 42;
  const LogTargetFn target = diag_normal_target(arma::vec{1.0, 1.0});
  const arma::vec q0{0.1, -0.2};
  const ChainRecord a = magi::run_chain(q0, cfg, target, unbounded(2));
  const ChainRecord b = magi::run_chain(q0, cfg, target, unbounded(2));
  CHECK(arma::abs(a.positions - b.positions).max() == 0.0);
  CHECK(arma::abs(a.lp_trace - b.lp_trace).max() == 0.0);
  CHECK(arma::abs(a.final_eps - b.final_eps).max() == 0.0);
  CHECK(arma::abs(a.accept_rate_history - b.accept_rate_history).max() == 0.0);
}

TEST_CASE("run_chain: standard normal in five dimensions") {
  HmcConfig cfg;
  cfg.n_iter = 20000;
  cfg.n_leapfrog = 20;
  cfg.burnin_ratio = 0.5;
  cfg.step_factor = arma::vec{0.1};
  cfg.seed = 7;
  const LogTargetFn target = diag_normal_target(arma::vec(5, arma::fill::ones));
  const ChainRecord rec =
      magi::run_chain(arma::vec(5, arma::fill::zeros), cfg, target,
                      unbounded(5));

  REQUIRE(rec.positions.n_rows == 10000);
  for (arma::uword d = 0; d < 5; ++d) {
    CHECK(std::abs(arma::mean(rec.positions.col(d))) < 0.05);
    const double v = arma::var(rec.positions.col(d));
    CHECK(v > 0.9);
    CHECK(v < 1.1);
  }
  // Post burn-in acceptance (windows 100..199) sits in the healthy band.
  const arma::vec post =
      rec.accept_rate_history.tail(rec.accept_rate_history.n_elem / 2);
  const double rate = arma::mean(post);
  CHECK(rate > 0.55);
  CHECK(rate < 0.95);
}

TEST_CASE("run_chain: half-normal chain never violates the lower bound") {
  HmcConfig cfg;
  cfg.n_iter = 4000;
  cfg.n_leapfrog = 10;
  cfg.step_factor = arma::vec{0.2};
  cfg.seed = 11;
  const LogTargetFn target = diag_normal_target(arma::vec{1.0});
  Bounds half_line{arma::vec{0.0}, arma::vec{arma::datum::inf}};
  const ChainRecord rec =
      magi::run_chain(arma::vec{0.5}, cfg, target, half_line);

  CHECK(rec.positions.min() >= 0.0);
  // Half-normal mean is sqrt(2/pi) ~ 0.7979.
  CHECK(arma::mean(rec.positions.col(0)) == doctest::Approx(0.798).epsilon(0.1));
}

TEST_CASE("run_chain: kept samples pass a KS check against N(0,1)") {
  HmcConfig cfg;
  cfg.n_iter = 200000;
  cfg.n_leapfrog = 10;
  cfg.step_factor = arma::vec{0.5};
  cfg.seed = 3;
  const LogTargetFn target = diag_normal_target(arma::vec{1.0});
  const ChainRecord rec =
      magi::run_chain(arma::vec{0.0}, cfg, target, unbounded(1));
  REQUIRE(rec.positions.n_rows == 100000);
  CHECK(ks_vs_std_normal(rec.positions.col(0)) < 0.02);
}

TEST_CASE("run_chain: step sizes adapt to per-coordinate scales") {
  // N(0, diag(1, 100)): the second coordinate needs a step ~10x larger.
  HmcConfig cfg;
  cfg.n_iter = 6000;
  cfg.n_leapfrog = 20;
  cfg.step_factor = arma::vec{0.1};
  cfg.seed = 5;
  const LogTargetFn target = diag_normal_target(arma::vec{1.0, 100.0});
  const ChainRecord rec =
      magi::run_chain(arma::vec{0.0, 0.0}, cfg, target, unbounded(2));
  const double ratio = rec.final_eps(1) / rec.final_eps(0);
  CHECK(ratio > 5.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("run_chain: validation") {
  const LogTargetFn target = diag_normal_target(arma::vec{1.0});
  HmcConfig cfg;
  cfg.n_iter = 100;
  cfg.n_leapfrog = 5;
  cfg.step_factor = arma::vec{0.1};

  SUBCASE("q0 outside the bounds") {
    Bounds pos{arma::vec{0.0}, arma::vec{arma::datum::inf}};
    CHECK_THROWS_AS(magi::run_chain(arma::vec{-1.0}, cfg, target, pos),
                    std::invalid_argument);
  }
  SUBCASE("step_factor length mismatch") {
    HmcConfig c = cfg;
    c.step_factor = arma::vec{0.1, 0.2, 0.3};
    CHECK_THROWS_AS(magi::run_chain(arma::vec{0.0}, c, target, unbounded(1)),
                    std::invalid_argument);
  }
  SUBCASE("non-positive step_factor") {
    HmcConfig c = cfg;
    c.step_factor = arma::vec{-0.1};
    CHECK_THROWS_AS(magi::run_chain(arma::vec{0.0}, c, target, unbounded(1)),
                    std::invalid_argument);
  }
  SUBCASE("burnin_ratio outside (0,1)") {
    HmcConfig c = cfg;
    c.burnin_ratio = 1.0;
    CHECK_THROWS_AS(magi::run_chain(arma::vec{0.0}, c, target, unbounded(1)),
                    std::invalid_argument);
  }
  SUBCASE("zero iterations") {
    HmcConfig c = cfg;
    c.n_iter = 0;
    CHECK_THROWS_AS(magi::run_chain(arma::vec{0.0}, c, target, unbounded(1)),
                    std::invalid_argument);
  }
  SUBCASE("target non-finite at q0") {
    const LogTargetFn bad = [](const arma::vec&, arma::vec& grad) {
      grad.zeros();
      return -arma::datum::inf;
    };
    CHECK_THROWS_AS(magi::run_chain(arma::vec{0.0}, cfg, bad, unbounded(1)),
                    std::invalid_argument);
  }
}

}  // TEST_SUITE
