#include "magi/hmc.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace magi {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_open() {
  return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * arma::datum::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

arma::vec Rng::normal_vec(arma::uword n) {
  arma::vec out(n);
  for (arma::uword i = 0; i < n; ++i) out(i) = normal();
  return out;
}

arma::vec Rng::uniform_vec(arma::uword n) {
  arma::vec out(n);
  for (arma::uword i = 0; i < n; ++i) out(i) = uniform();
  return out;
}

namespace {

// Mirrors q(i) into [lower, upper], flipping p(i) once per bounce. A step of
// length eps can overshoot a narrow box several times over; cap the bounce
// count so a pathological excursion cannot loop unboundedly.
bool reflect_into_bounds(arma::vec& q, arma::vec& p, const Bounds& bounds) {
  for (arma::uword i = 0; i < q.n_elem; ++i) {
    const double lo = bounds.lower(i);
    const double hi = bounds.upper(i);
    int bounces = 0;
    while (q(i) < lo || q(i) > hi) {
      if (q(i) < lo) {
        q(i) = 2.0 * lo - q(i);
      } else {
        q(i) = 2.0 * hi - q(i);
      }
      p(i) = -p(i);
      if (++bounces > 1000 || !std::isfinite(q(i))) return false;
    }
  }
  return true;
}

struct PathEnd {
  arma::vec q;
  arma::vec p;
  arma::vec grad;   // d(log target)/dq at q (valid endpoints only)
  double lp = 0.0;  // log target at q
  bool valid = true;
};

// Leapfrog driven by a value+gradient functional (the form the posterior
// provides); returns the endpoint state with its log target and gradient so
// the caller never re-evaluates.
PathEnd leapfrog_with_target(const arma::vec& q0, const arma::vec& p0,
                             const arma::vec& eps, arma::uword n_steps,
                             const LogTargetFn& target, const Bounds& bounds,
                             double lp0, const arma::vec& grad0) {
  PathEnd end;
  end.q = q0;
  end.p = p0;
  end.grad = grad0;
  end.lp = lp0;
  for (arma::uword step = 0; step < n_steps; ++step) {
    // grad_U = -grad(log target): momentum half-step.
    end.p += 0.5 * (eps % end.grad);
    end.q += eps % end.p;
    if (!reflect_into_bounds(end.q, end.p, bounds)) {
      end.valid = false;
      return end;
    }
    end.grad.zeros();
    end.lp = target(end.q, end.grad);
    if (!std::isfinite(end.lp) || !end.grad.is_finite()) {
      end.valid = false;
      return end;
    }
    end.p += 0.5 * (eps % end.grad);
  }
  return end;
}

}  // namespace

LeapfrogResult leapfrog(const arma::vec& q0, const arma::vec& p0,
                        const arma::vec& eps, arma::uword n_steps,
                        const std::function<arma::vec(const arma::vec&)>& grad_u,
                        const Bounds& bounds) {
  const arma::uword dim = q0.n_elem;
  if (p0.n_elem != dim || eps.n_elem != dim || bounds.lower.n_elem != dim ||
      bounds.upper.n_elem != dim) {
    throw std::invalid_argument("leapfrog: dimension mismatch");
  }
  if (eps.min() <= 0.0) {
    throw std::invalid_argument("leapfrog: eps must be positive");
  }
  // Adapt to the value+gradient form with U = -log target, value unused.
  const LogTargetFn adapter = [&grad_u](const arma::vec& q, arma::vec& grad) {
    grad = -grad_u(q);
    return grad.is_finite() ? 0.0 : -arma::datum::inf;
  };
  arma::vec grad0(dim);
  const double lp0 = adapter(q0, grad0);
  LeapfrogResult out;
  if (!std::isfinite(lp0)) {
    out.q = q0;
    out.p = p0;
    out.valid = false;
    return out;
  }
  const PathEnd end =
      leapfrog_with_target(q0, p0, eps, n_steps, adapter, bounds, lp0, grad0);
  out.q = end.q;
  out.p = end.p;
  out.valid = end.valid;
  return out;
}

namespace {

// Like the public hmc_iteration, but reuses (lp, grad) at the current state
// and hands back the accepted endpoint's gradient, so a chain performs
// exactly one target evaluation per leapfrog step.
struct InternalIteration {
  bool accepted = false;
  double lp = 0.0;
  arma::vec q;
  arma::vec grad;
};

InternalIteration hmc_iteration_from(const arma::vec& q, double lp_q,
                                     const arma::vec& grad_q,
                                     const arma::vec& eps_base,
                                     arma::uword n_leapfrog,
                                     const LogTargetFn& target,
                                     const Bounds& bounds, Rng& rng) {
  const arma::uword dim = q.n_elem;
  const arma::vec p0 = rng.normal_vec(dim);
  arma::vec eps(dim);
  for (arma::uword i = 0; i < dim; ++i) {
    eps(i) = eps_base(i) * (1.0 + rng.uniform());
  }

  InternalIteration out;
  out.q = q;
  out.lp = lp_q;
  out.grad = grad_q;

  PathEnd end = leapfrog_with_target(q, p0, eps, n_leapfrog, target, bounds,
                                     lp_q, grad_q);
  if (!end.valid) return out;  // invalid proposal: reject

  // log acceptance ratio = (lp* - lp) + (|p|^2 - |p*|^2)/2.
  const double log_alpha =
      (end.lp - lp_q) + 0.5 * (arma::dot(p0, p0) - arma::dot(end.p, end.p));
  if (log_alpha >= 0.0 || std::log(rng.uniform_open()) < log_alpha) {
    out.q = std::move(end.q);
    out.grad = std::move(end.grad);
    out.lp = end.lp;
    out.accepted = true;
  }
  return out;
}

}  // namespace

IterationResult hmc_iteration(const arma::vec& q, const arma::vec& eps_base,
                              arma::uword n_leapfrog, const LogTargetFn& target,
                              const Bounds& bounds, Rng& rng) {
  const arma::uword dim = q.n_elem;
  if (eps_base.n_elem != dim || bounds.lower.n_elem != dim ||
      bounds.upper.n_elem != dim) {
    throw std::invalid_argument("hmc_iteration: dimension mismatch");
  }
  arma::vec grad_q(dim, arma::fill::zeros);
  const double lp_q = target(q, grad_q);
  if (!std::isfinite(lp_q) || !grad_q.is_finite()) {
    throw std::invalid_argument(
        "hmc_iteration: target not finite at the current state");
  }
  InternalIteration step = hmc_iteration_from(q, lp_q, grad_q, eps_base,
                                              n_leapfrog, target, bounds, rng);
  IterationResult out;
  out.q = std::move(step.q);
  out.accepted = step.accepted;
  out.lp = step.lp;
  return out;
}

arma::vec tune_step_sizes(const WindowStats& stats, const arma::vec& eps) {
  arma::vec out = eps;
  if (stats.accept_rate > 0.9) {
    out *= 1.2;
  } else if (stats.accept_rate < 0.6) {
    out *= 0.8;
  }
  const arma::vec& sd = stats.coordinate_sd;
  if (sd.n_elem != eps.n_elem || !sd.is_finite() || sd.min() <= 0.0) {
    return out;  // no usable shape information this window
  }
  const double gm_eps = std::exp(arma::mean(arma::log(out)));
  const double gm_sd = std::exp(arma::mean(arma::log(sd)));
  return gm_eps * (sd / gm_sd);
}

ChainRecord run_chain(const arma::vec& q0, const HmcConfig& config,
                      const LogTargetFn& target, const Bounds& bounds) {
  const arma::uword dim = q0.n_elem;
  if (dim == 0) {
    throw std::invalid_argument("run_chain: empty start point");
  }
  if (config.n_iter == 0 || config.n_leapfrog == 0) {
    throw std::invalid_argument("run_chain: n_iter and n_leapfrog must be >= 1");
  }
  if (!(config.burnin_ratio > 0.0 && config.burnin_ratio < 1.0)) {
    throw std::invalid_argument("run_chain: burnin_ratio must lie in (0, 1)");
  }
  if (bounds.lower.n_elem != dim || bounds.upper.n_elem != dim) {
    throw std::invalid_argument("run_chain: bounds dimension mismatch");
  }
  for (arma::uword i = 0; i < dim; ++i) {
    if (!(q0(i) >= bounds.lower(i) && q0(i) <= bounds.upper(i))) {
      throw std::invalid_argument("run_chain: q0 violates bounds at coordinate " +
                                  std::to_string(i));
    }
  }
  arma::vec eps;
  if (config.step_factor.n_elem == 1) {
    eps = arma::vec(dim, arma::fill::value(config.step_factor(0)));
  } else if (config.step_factor.n_elem == dim) {
    eps = config.step_factor;
  } else {
    throw std::invalid_argument(
        "run_chain: step_factor must be scalar or one entry per coordinate");
  }
  if (!(eps.min() > 0.0) || !eps.is_finite()) {
    throw std::invalid_argument("run_chain: step_factor must be positive");
  }

  arma::vec grad(dim, arma::fill::zeros);
  double lp = target(q0, grad);
  if (!std::isfinite(lp) || !grad.is_finite()) {
    throw std::invalid_argument("run_chain: target not finite at q0");
  }

  const arma::uword burnin = static_cast<arma::uword>(
      std::floor(config.burnin_ratio * static_cast<double>(config.n_iter)));
  const arma::uword n_kept = config.n_iter - burnin;
  constexpr arma::uword kWindow = 100;

  ChainRecord rec;
  rec.positions.set_size(n_kept, dim);
  rec.lp_trace.set_size(n_kept);
  std::vector<double> window_rates;

  Rng rng(config.seed);
  arma::vec q = q0;
  arma::mat window_pos(kWindow, dim);
  arma::uword window_fill = 0;
  arma::uword window_accepts = 0;

  for (arma::uword it = 0; it < config.n_iter; ++it) {
    InternalIteration step = hmc_iteration_from(q, lp, grad, eps,
                                                config.n_leapfrog, target,
                                                bounds, rng);
    q = std::move(step.q);
    grad = std::move(step.grad);
    lp = step.lp;

    window_pos.row(window_fill) = q.t();
    ++window_fill;
    if (step.accepted) ++window_accepts;
    if (window_fill == kWindow) {
      const double rate =
          static_cast<double>(window_accepts) / static_cast<double>(kWindow);
      window_rates.push_back(rate);
      if (config.progress) config.progress(it + 1, rate);
      if (it + 1 <= burnin) {  // tune only while entirely inside burn-in
        WindowStats stats;
        stats.accept_rate = rate;
        stats.coordinate_sd = arma::stddev(window_pos, 0, 0).t();
        eps = tune_step_sizes(stats, eps);
      }
      window_fill = 0;
      window_accepts = 0;
    }

    if (it >= burnin) {
      rec.positions.row(it - burnin) = q.t();
      rec.lp_trace(it - burnin) = lp;
    }
  }

  rec.accept_rate_history = arma::vec(window_rates);
  rec.final_eps = eps;
  return rec;
}

}  // namespace magi
