#include "magi/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "magi/optim.hpp"

namespace magi {

double compute_temper(const arma::umat& obs_mask, arma::uword dim_x,
                      arma::uword grid_size) {
  if (obs_mask.n_rows != grid_size || obs_mask.n_cols != dim_x) {
    throw std::invalid_argument(
        "compute_temper: obs_mask must have shape grid_size x dim_x");
  }
  const arma::uword n_obs = arma::accu(obs_mask != 0);
  if (n_obs == 0) {
    throw std::invalid_argument("compute_temper: no observations");
  }
  return static_cast<double>(dim_x) * static_cast<double>(grid_size) /
         static_cast<double>(n_obs);
}

void PosteriorContext::validate() const {
  const arma::uword n = grid.n_elem;
  const arma::uword d = model.dim_x;
  if (n < 2) {
    throw std::invalid_argument("PosteriorContext: grid needs >= 2 points");
  }
  for (arma::uword i = 1; i < n; ++i) {
    if (!(grid(i) > grid(i - 1))) {
      throw std::invalid_argument(
          "PosteriorContext: grid must be strictly increasing");
    }
  }
  if (obs_values.n_rows != n || obs_values.n_cols != d) {
    throw std::invalid_argument("PosteriorContext: obs_values must be |I| x D");
  }
  if (obs_mask.n_rows != n || obs_mask.n_cols != d) {
    throw std::invalid_argument("PosteriorContext: obs_mask must be |I| x D");
  }
  if (bundles.size() != d) {
    throw std::invalid_argument(
        "PosteriorContext: needs one GpBundle per component");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("PosteriorContext: beta must be positive");
  }
  for (arma::uword c = 0; c < d; ++c) {
    const GpBundle& b = bundles[c];
    if (b.times.n_elem != n || arma::abs(b.times - grid).max() > 1e-12) {
      throw std::invalid_argument(
          "PosteriorContext: bundle " + std::to_string(c) +
          " was built on a different grid");
    }
  }
  for (arma::uword c = 0; c < d; ++c) {
    for (arma::uword t = 0; t < n; ++t) {
      if (obs_mask(t, c) != 0 && !std::isfinite(obs_values(t, c))) {
        throw std::invalid_argument(
            "PosteriorContext: obs_mask marks a non-finite observation");
      }
    }
  }
}

namespace {

// GP-prior + ODE-fidelity terms of one component (the part scaled by
// 1/beta), given that component's f column.
double gp_ode_contribution(const GpBundle& b, const arma::vec& x_col,
                           const arma::vec& f_col, double inv_beta) {
  const arma::vec r = x_col - b.mu;
  const double quad_c = arma::dot(r, b.cinv.matvec(r));
  const arma::vec e = f_col - b.dotmu - b.m.matvec(r);
  const double quad_psi = arma::dot(e, b.psinv.matvec(e));
  return -0.5 * inv_beta * (quad_c + b.logdet_c + quad_psi + b.logdet_psi);
}

}  // namespace

PosteriorEval log_posterior(const FitState& state, const PosteriorContext& ctx) {
  const arma::uword n = ctx.grid.n_elem;
  const arma::uword d = ctx.model.dim_x;
  const arma::uword p = ctx.model.dim_theta;
  if (state.x.n_rows != n || state.x.n_cols != d) {
    throw std::invalid_argument("log_posterior: state.x must be |I| x D");
  }
  if (state.theta.n_elem != p) {
    throw std::invalid_argument("log_posterior: theta has wrong length");
  }
  if (state.sigma.n_elem != d) {
    throw std::invalid_argument("log_posterior: sigma must have length D");
  }
  if (ctx.bundles.size() != d) {
    throw std::invalid_argument("log_posterior: context is missing bundles");
  }

  PosteriorEval out;
  out.grad_x.zeros(n, d);
  out.grad_theta.zeros(p);
  out.grad_sigma.zeros(d);
  const auto rejected = [&out]() -> PosteriorEval& {
    out.value = -arma::datum::inf;
    out.grad_x.zeros();
    out.grad_theta.zeros();
    out.grad_sigma.zeros();
    return out;
  };

  // Rejected states: return -inf, never throw (HMC treats them as ordinary
  // rejections).
  if (!state.x.is_finite() || !state.theta.is_finite()) return rejected();
  for (arma::uword i = 0; i < p; ++i) {
    if (state.theta(i) < ctx.model.theta_lower(i) ||
        state.theta(i) > ctx.model.theta_upper(i)) {
      return rejected();
    }
  }
  if (ctx.positive_system && state.x.min() < 0.0) return rejected();
  for (arma::uword c = 0; c < d; ++c) {
    if (arma::any(ctx.obs_mask.col(c)) &&
        !(std::isfinite(state.sigma(c)) && state.sigma(c) > 0.0)) {
      return rejected();
    }
  }

  const arma::mat f = ctx.model.f(state.theta, state.x, ctx.grid);
  if (!f.is_finite()) return rejected();  // dynamics blew up: reject
  const arma::cube jx = ctx.model.jac_x(state.theta, state.x, ctx.grid);
  const arma::cube jt = ctx.model.jac_theta(state.theta, state.x, ctx.grid);
  if (!jx.is_finite() || !jt.is_finite()) return rejected();

  const double inv_beta = 1.0 / ctx.beta;
  double value = 0.0;  // log pi(theta) = 0 inside the bounds

  for (arma::uword c = 0; c < d; ++c) {
    const GpBundle& b = ctx.bundles[c];
    const arma::vec r = state.x.col(c) - b.mu;
    const arma::vec cr = b.cinv.matvec(r);
    const arma::vec e = f.col(c) - b.dotmu - b.m.matvec(r);
    const arma::vec w = b.psinv.matvec(e);
    double contrib = -0.5 * inv_beta *
                     (arma::dot(r, cr) + b.logdet_c + arma::dot(e, w) +
                      b.logdet_psi);

    // Observation likelihood (not tempered).
    const double sigma = state.sigma(c);
    const double s2 = sigma * sigma;
    for (arma::uword t = 0; t < n; ++t) {
      if (ctx.obs_mask(t, c) == 0) continue;
      const double res = state.x(t, c) - ctx.obs_values(t, c);
      contrib -= 0.5 * (res * res / s2 + std::log(2.0 * arma::datum::pi * s2));
      out.grad_x(t, c) -= res / s2;
      out.grad_sigma(c) += res * res / (s2 * sigma) - 1.0 / sigma;
    }

    if (std::isnan(contrib) || contrib == arma::datum::inf) {
      throw std::runtime_error(
          "log_posterior: non-finite contribution for component '" +
          ctx.model.state_names[c] + "' (index " + std::to_string(c) +
          "); the band-truncated inverse covariance may have diverged - "
          "increase band_size");
    }
    if (contrib == -arma::datum::inf) return rejected();
    value += contrib;

    // GP-prior and the -m_d(x_d - mu_d) part of e_d.
    out.grad_x.col(c) += inv_beta * (b.m.tmatvec(w) - cr);
    // f-dependence of e_d: one row of jac per grid point.
    for (arma::uword j = 0; j < d; ++j) {
      out.grad_x.col(j) -= inv_beta * (jx.slice(c).col(j) % w);
    }
    for (arma::uword i = 0; i < p; ++i) {
      out.grad_theta(i) -= inv_beta * arma::dot(jt.slice(c).col(i), w);
    }
  }

  out.value = value;
  return out;
}

namespace {

struct Layout {
  arma::uword p = 0;                      // theta block size
  std::vector<arma::uword> phi_offset;    // per free component
  std::vector<arma::uword> phi_size_of;   // per free component
  std::vector<arma::uword> x_offset;      // per free component
  arma::uword n = 0;
  arma::uword total = 0;
};

}  // namespace

MissingFitResult optimize_missing_components(
    const PosteriorContext& ctx, const FitState& init,
    const std::vector<arma::uword>& free_components) {
  ctx.validate();
  const arma::uword n = ctx.grid.n_elem;
  const arma::uword d = ctx.model.dim_x;
  const arma::uword p = ctx.model.dim_theta;
  if (init.x.n_rows != n || init.x.n_cols != d || init.theta.n_elem != p ||
      init.sigma.n_elem != d) {
    throw std::invalid_argument(
        "optimize_missing_components: init has wrong shapes");
  }
  for (const arma::uword c : free_components) {
    if (c >= d) {
      throw std::invalid_argument(
          "optimize_missing_components: free component index out of range");
    }
  }
  {
    std::vector<arma::uword> sorted = free_components;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw std::invalid_argument(
          "optimize_missing_components: duplicate free component index");
    }
  }

  Layout lay;
  lay.p = p;
  lay.n = n;
  arma::uword off = p;
  for (const arma::uword c : free_components) {
    lay.phi_offset.push_back(off);
    const arma::uword np = ctx.bundles[c].spec.phi.n_elem;
    lay.phi_size_of.push_back(np);
    off += np;
  }
  for (arma::uword k = 0; k < free_components.size(); ++k) {
    lay.x_offset.push_back(off);
    off += n;
  }
  lay.total = off;

  MissingFitResult result;
  result.theta = init.theta;
  result.x.set_size(n, free_components.size());
  for (arma::uword k = 0; k < free_components.size(); ++k) {
    result.phi.push_back(ctx.bundles[free_components[k]].spec.phi);
    result.x.col(k) = init.x.col(free_components[k]);
  }
  if (lay.total == 0) {  // nothing to optimize
    result.value = log_posterior(init, ctx).value;
    return result;
  }

  const BoundTransform theta_tr(ctx.model.theta_lower, ctx.model.theta_upper);
  // x of free components: restricted to [0, inf) for positive systems.
  std::unique_ptr<BoundTransform> x_tr;
  if (ctx.positive_system) {
    x_tr = std::make_unique<BoundTransform>(
        arma::vec(n, arma::fill::zeros),
        arma::vec(n, arma::fill::value(arma::datum::inf)));
  }

  arma::vec v0(lay.total);
  if (p > 0) v0.head(p) = theta_tr.to_unconstrained(init.theta);
  for (arma::uword k = 0; k < free_components.size(); ++k) {
    const arma::uword c = free_components[k];
    v0.subvec(lay.phi_offset[k], arma::size(lay.phi_size_of[k], 1)) =
        arma::log(ctx.bundles[c].spec.phi);
    const arma::vec xc = init.x.col(c);
    v0.subvec(lay.x_offset[k], arma::size(n, 1)) =
        x_tr ? x_tr->to_unconstrained(xc) : xc;
  }

  // Private working copies; observed components' bundles are copied once and
  // never rebuilt.
  PosteriorContext work = ctx;
  FitState st = init;

  const auto objective = [&](const arma::vec& v, arma::vec& grad) -> double {
    // Unpack theta.
    arma::vec u_theta;
    if (p > 0) {
      u_theta = v.head(p);
      st.theta = theta_tr.to_constrained(u_theta);
    }
    // Rebuild free components' bundles where phi moved.
    for (arma::uword k = 0; k < free_components.size(); ++k) {
      const arma::uword c = free_components[k];
      const arma::vec phi =
          arma::exp(v.subvec(lay.phi_offset[k], arma::size(lay.phi_size_of[k], 1)));
      GpBundle& b = work.bundles[c];
      if (arma::approx_equal(phi, b.spec.phi, "absdiff", 0.0)) continue;
      KernelSpec sp = b.spec;
      sp.phi = phi;
      try {
        work.bundles[c] = build_gp_bundle(work.grid, sp, b.mu, b.dotmu, b.cinv.band);
      } catch (const std::runtime_error&) {
        return arma::datum::nan;  // unfactorizable phi: stop at best point
      }
    }
    // Unpack x of free components.
    for (arma::uword k = 0; k < free_components.size(); ++k) {
      const arma::vec u_x = v.subvec(lay.x_offset[k], arma::size(n, 1));
      st.x.col(free_components[k]) = x_tr ? x_tr->to_constrained(u_x) : u_x;
    }

    PosteriorEval ev;
    try {
      ev = log_posterior(st, work);
    } catch (const std::runtime_error&) {
      return arma::datum::nan;
    }
    if (!std::isfinite(ev.value)) return arma::datum::nan;

    if (p > 0) grad.head(p) = -(ev.grad_theta % theta_tr.dx_du(u_theta));
    const double inv_beta = 1.0 / work.beta;
    const arma::mat f = ctx.model.f(st.theta, st.x, work.grid);
    for (arma::uword k = 0; k < free_components.size(); ++k) {
      const arma::uword c = free_components[k];
      arma::vec gx = ev.grad_x.col(c);
      if (x_tr) gx %= x_tr->dx_du(v.subvec(lay.x_offset[k], arma::size(n, 1)));
      grad.subvec(lay.x_offset[k], arma::size(n, 1)) = -gx;

      // phi gradient by central differences of this component's GP/ODE
      // contribution (the only part of the value phi_c touches).
      const GpBundle& b = work.bundles[c];
      const double h = 1e-4;
      for (arma::uword q = 0; q < lay.phi_size_of[k]; ++q) {
        double side[2] = {0.0, 0.0};
        for (int s = 0; s < 2; ++s) {
          KernelSpec sp = b.spec;
          sp.phi(q) *= std::exp(s == 0 ? h : -h);
          try {
            const GpBundle bq =
                build_gp_bundle(work.grid, sp, b.mu, b.dotmu, b.cinv.band);
            side[s] = gp_ode_contribution(bq, st.x.col(c), f.col(c), inv_beta);
          } catch (const std::runtime_error&) {
            return arma::datum::nan;
          }
        }
        grad(lay.phi_offset[k] + q) = -(side[0] - side[1]) / (2.0 * h);
      }
    }
    return -ev.value;
  };

  OptimOptions opts;
  opts.max_iter = 300;
  const OptimResult res = minimize_bfgs(objective, v0, opts);

  if (std::isfinite(res.value)) {
    if (p > 0) result.theta = theta_tr.to_constrained(res.x.head(p));
    for (arma::uword k = 0; k < free_components.size(); ++k) {
      result.phi[k] = arma::exp(
          res.x.subvec(lay.phi_offset[k], arma::size(lay.phi_size_of[k], 1)));
      const arma::vec u_x = res.x.subvec(lay.x_offset[k], arma::size(n, 1));
      result.x.col(k) = x_tr ? x_tr->to_constrained(u_x) : u_x;
    }
    result.value = -res.value;
    result.converged = res.converged;
  } else {
    // Even the starting point failed to evaluate; report it unchanged.
    result.value = -arma::datum::inf;
    result.converged = false;
  }
  return result;
}

}  // namespace magi
