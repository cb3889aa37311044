#include "magi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "magi/gpfit.hpp"
#include "magi/hmc.hpp"
#include "magi/posterior.hpp"

namespace magi {

namespace {

constexpr double kTimeTol = 1e-9;

std::string component_label(const ObservationSet& data, arma::uword d) {
  if (d < data.component_names.size()) return data.component_names[d];
  return "component " + std::to_string(d + 1);
}

// Linear interpolation of (t_obs, y_obs) onto `grid`, flat beyond the first
// and last observation.
arma::vec interp_onto_grid(const arma::vec& grid, const arma::vec& t_obs,
                           const arma::vec& y_obs) {
  arma::vec out(grid.n_elem);
  const arma::uword m = t_obs.n_elem;
  for (arma::uword i = 0; i < grid.n_elem; ++i) {
    const double t = grid(i);
    if (t <= t_obs(0)) {
      out(i) = y_obs(0);
    } else if (t >= t_obs(m - 1)) {
      out(i) = y_obs(m - 1);
    } else {
      const arma::uword j = static_cast<arma::uword>(
          std::upper_bound(t_obs.begin(), t_obs.end(), t) - t_obs.begin() - 1);
      const double w = (t - t_obs(j)) / (t_obs(j + 1) - t_obs(j));
      out(i) = (1.0 - w) * y_obs(j) + w * y_obs(j + 1);
    }
  }
  return out;
}

// Optimizer start for theta when the user gives none: 1 where the bounds
// allow it, otherwise a point comfortably inside the box.
arma::vec default_theta_start(const OdeSystem& model) {
  arma::vec start(model.dim_theta);
  for (arma::uword i = 0; i < model.dim_theta; ++i) {
    const double lo = model.theta_lower(i);
    const double hi = model.theta_upper(i);
    double v = 1.0;
    if (v < lo || v > hi) {
      if (std::isfinite(lo) && std::isfinite(hi)) {
        v = 0.5 * (lo + hi);
      } else if (std::isfinite(lo)) {
        v = lo + 1.0;
      } else {
        v = hi - 1.0;
      }
    }
    start(i) = v;
  }
  return start;
}

}  // namespace

arma::umat ObservationSet::mask() const {
  arma::umat m(values.n_rows, values.n_cols, arma::fill::zeros);
  for (arma::uword j = 0; j < values.n_cols; ++j) {
    for (arma::uword i = 0; i < values.n_rows; ++i) {
      if (std::isfinite(values(i, j))) m(i, j) = 1;
    }
  }
  return m;
}

void ObservationSet::validate() const {
  if (grid.n_elem == 0) {
    throw std::invalid_argument("ObservationSet: empty time grid");
  }
  if (values.n_rows != grid.n_elem || values.n_cols == 0) {
    throw std::invalid_argument(
        "ObservationSet: values must have one row per time point and at "
        "least one component column");
  }
  if (!grid.is_finite()) {
    throw std::invalid_argument("ObservationSet: non-finite time value");
  }
  for (arma::uword i = 1; i < grid.n_elem; ++i) {
    if (!(grid(i) > grid(i - 1))) {
      throw std::invalid_argument(
          "ObservationSet: times must be strictly increasing (row " +
          std::to_string(i + 1) + ")");
    }
  }
  if (!component_names.empty() && component_names.size() != values.n_cols) {
    throw std::invalid_argument(
        "ObservationSet: component_names length does not match the number "
        "of components");
  }
  if (!arma::any(arma::vectorise(mask()))) {
    throw std::invalid_argument("ObservationSet: no observed values at all");
  }
}

ObservationSet set_discretization_level(const ObservationSet& data,
                                        arma::uword level) {
  data.validate();
  if (level == 0) return data;
  if (level > 20) {
    throw std::invalid_argument("set_discretization_level: level too large");
  }
  const arma::uword insert = (arma::uword{1} << level) - 1;
  const arma::uword n = data.grid.n_elem;
  const arma::uword n_new = n + (n - 1) * insert;

  ObservationSet out;
  out.component_names = data.component_names;
  out.grid.set_size(n_new);
  out.values.set_size(n_new, data.values.n_cols);
  out.values.fill(arma::datum::nan);

  arma::uword idx = 0;
  for (arma::uword i = 0; i < n; ++i) {
    out.grid(idx) = data.grid(i);
    out.values.row(idx) = data.values.row(i);
    ++idx;
    if (i + 1 < n) {
      const double step =
          (data.grid(i + 1) - data.grid(i)) / static_cast<double>(insert + 1);
      for (arma::uword k = 1; k <= insert; ++k) {
        out.grid(idx) = data.grid(i) + step * static_cast<double>(k);
        ++idx;
      }
    }
  }
  return out;
}

ObservationSet set_discretization_by(const ObservationSet& data, double incr) {
  if (!(incr > 0.0)) {
    throw std::invalid_argument("set_discretization_by: incr must be > 0");
  }
  data.validate();
  const double first = data.grid(0);
  const double last = data.grid(data.grid.n_elem - 1);

  std::vector<double> cand;
  for (arma::uword k = 0;; ++k) {
    const double t = first + incr * static_cast<double>(k);
    if (t > last + kTimeTol) break;
    cand.push_back(t);
  }

  // Merge the two sorted lists; an arithmetic point within 1e-9 of an
  // existing row is dropped so the observation row survives bit-exactly.
  std::vector<double> times;
  std::vector<arma::sword> src;  // row in `data`, or -1 for an inserted row
  arma::uword i = 0;
  std::size_t j = 0;
  while (i < data.grid.n_elem || j < cand.size()) {
    if (i < data.grid.n_elem &&
        (j == cand.size() || data.grid(i) <= cand[j] + kTimeTol)) {
      if (j < cand.size() && std::abs(data.grid(i) - cand[j]) <= kTimeTol) ++j;
      times.push_back(data.grid(i));
      src.push_back(static_cast<arma::sword>(i));
      ++i;
    } else {
      times.push_back(cand[j]);
      src.push_back(-1);
      ++j;
    }
  }

  ObservationSet out;
  out.component_names = data.component_names;
  out.grid = arma::vec(times);
  out.values.set_size(times.size(), data.values.n_cols);
  out.values.fill(arma::datum::nan);
  for (arma::uword r = 0; r < out.grid.n_elem; ++r) {
    if (src[r] >= 0) out.values.row(r) = data.values.row(static_cast<arma::uword>(src[r]));
  }
  return out;
}

McmcOutput magi_solve(const ObservationSet& data, const OdeSystem& model,
                      const SolveControl& control) {
  data.validate();
  const arma::uword D = model.dim_x;
  const arma::uword nI = data.grid.n_elem;
  const arma::uword nTh = model.dim_theta;
  if (data.values.n_cols != D) {
    throw std::invalid_argument(
        "magi_solve: data has " + std::to_string(data.values.n_cols) +
        " components but the model expects " + std::to_string(D));
  }

  const arma::umat mask = data.mask();
  const arma::uvec obs_count = arma::sum(mask, 0).t();
  std::vector<arma::uword> observed, unobserved;
  for (arma::uword d = 0; d < D; ++d) {
    (obs_count(d) > 0 ? observed : unobserved).push_back(d);
  }

  const arma::uword nphi = phi_size(control.kernel_kind);

  // ---- control validation ------------------------------------------------
  if (control.use_fixed_sigma && !control.sigma) {
    throw std::invalid_argument(
        "magi_solve: use_fixed_sigma requires control.sigma");
  }
  if (control.sigma && control.sigma->n_elem != D) {
    throw std::invalid_argument("magi_solve: control.sigma must have length " +
                                std::to_string(D));
  }
  auto sigma_given = [&](arma::uword d) {
    return control.sigma && std::isfinite((*control.sigma)(d)) &&
           (*control.sigma)(d) > 0.0;
  };
  if (control.use_fixed_sigma) {
    for (const arma::uword d : observed) {
      if (!sigma_given(d)) {
        throw std::invalid_argument(
            "magi_solve: use_fixed_sigma requires a positive sigma for "
            "every observed component (" + component_label(data, d) + ")");
      }
    }
  }
  if (control.theta_init) {
    if (control.theta_init->n_elem != nTh) {
      throw std::invalid_argument(
          "magi_solve: control.theta_init must have length " +
          std::to_string(nTh));
    }
    for (arma::uword i = 0; i < nTh; ++i) {
      const double v = (*control.theta_init)(i);
      if (!std::isfinite(v) || v < model.theta_lower(i) ||
          v > model.theta_upper(i)) {
        throw std::invalid_argument(
            "magi_solve: control.theta_init violates the bounds of " +
            (i < model.theta_names.size() ? model.theta_names[i]
                                          : "parameter " + std::to_string(i + 1)));
      }
    }
  }
  auto phi_given = [&](arma::uword d) {
    return control.phi && control.phi->col(d).is_finite();
  };
  if (control.phi) {
    if (control.phi->n_rows != nphi || control.phi->n_cols != D) {
      throw std::invalid_argument(
          "magi_solve: control.phi must be " + std::to_string(nphi) + " x " +
          std::to_string(D));
    }
    for (arma::uword d = 0; d < D; ++d) {
      const arma::vec col = control.phi->col(d);
      const arma::uword n_finite = arma::find_finite(col).eval().n_elem;
      if (n_finite == nphi) {
        KernelSpec sp;
        sp.kind = control.kernel_kind;
        sp.phi = col;
        sp.validate();
      } else if (n_finite != 0) {
        throw std::invalid_argument(
            "magi_solve: control.phi column for " + component_label(data, d) +
            " mixes numbers and NaN; use an all-NaN column to request "
            "estimation");
      }
    }
  }
  if (control.x_init) {
    if (control.x_init->n_rows != nI || control.x_init->n_cols != D ||
        !control.x_init->is_finite()) {
      throw std::invalid_argument(
          "magi_solve: control.x_init must be a finite |I| x D matrix");
    }
  }
  if (control.mu.has_value() != control.dotmu.has_value()) {
    throw std::invalid_argument(
        "magi_solve: control.mu and control.dotmu must be supplied together");
  }
  if (control.mu) {
    if (control.mu->n_rows != nI || control.mu->n_cols != D ||
        control.dotmu->n_rows != nI || control.dotmu->n_cols != D ||
        !control.mu->is_finite() || !control.dotmu->is_finite()) {
      throw std::invalid_argument(
          "magi_solve: control.mu/dotmu must be finite |I| x D matrices");
    }
  }
  if (control.prior_temperature && !(*control.prior_temperature > 0.0)) {
    throw std::invalid_argument(
        "magi_solve: prior_temperature must be positive");
  }
  if (control.band_size == 0) {
    throw std::invalid_argument("magi_solve: band_size must be >= 1");
  }
  if (!(control.step_factor > 0.0) || !std::isfinite(control.step_factor)) {
    throw std::invalid_argument("magi_solve: step_factor must be positive");
  }
  if (control.skip_missing_component_optimization) {
    bool phi_all = control.phi.has_value();
    if (phi_all) {
      for (arma::uword d = 0; d < D; ++d) phi_all = phi_all && phi_given(d);
    }
    if (!phi_all || !control.x_init) {
      throw std::invalid_argument(
          "magi_solve: skip_missing_component_optimization requires "
          "control.x_init and a fully specified control.phi");
    }
  }

  // ---- stage 1: phi/sigma per observed component, x(I) start -------------
  arma::mat phi_mat(nphi, D, arma::fill::ones);
  arma::vec sigma_init(D, arma::fill::ones);
  const double span = data.grid(nI - 1) - data.grid(0);

  for (const arma::uword d : observed) {
    const arma::uvec rows = arma::find(mask.col(d));
    const arma::vec t_d = data.grid(rows);
    const arma::vec col = data.values.col(d);
    const arma::vec y_d = col(rows);

    const bool have_phi = phi_given(d);
    const bool have_sigma = sigma_given(d);
    if (have_phi) phi_mat.col(d) = control.phi->col(d);
    if (have_sigma) sigma_init(d) = (*control.sigma)(d);

    if (!have_phi || !have_sigma) {
      if (obs_count(d) < 3) {
        throw std::invalid_argument(
            "magi_solve: " + component_label(data, d) + " has only " +
            std::to_string(obs_count(d)) +
            " observations; at least 3 are needed to fit GP "
            "hyper-parameters (or supply control.phi and control.sigma)");
      }
      const auto sm = gp_smooth(
          y_d, t_d, control.kernel_kind,
          have_sigma ? std::optional<double>(sigma_init(d)) : std::nullopt);
      if (!have_phi) phi_mat.col(d) = sm.phi;
      if (!have_sigma) sigma_init(d) = sm.sigma;
      if (control.verbose) {
        std::cout << "[magi] gp fit " << component_label(data, d) << ": phi = ("
                  << phi_mat.col(d).t() << "), sigma = " << sigma_init(d)
                  << (sm.converged ? "" : " (not converged)") << '\n';
      }
    }
  }

  const arma::uvec all_obs_cells = arma::find(mask);
  const arma::vec obs_pool = arma::vec(arma::vectorise(data.values))(all_obs_cells);
  const double grand_mean = arma::mean(obs_pool);
  const double pooled_var =
      obs_pool.n_elem > 1 ? arma::var(obs_pool) : 1.0;

  for (const arma::uword d : unobserved) {
    sigma_init(d) = sigma_given(d) ? (*control.sigma)(d) : 1.0;  // inert
    if (phi_given(d)) {
      phi_mat.col(d) = control.phi->col(d);
    } else {
      phi_mat(0, d) = pooled_var > 0.0 ? pooled_var : 1.0;
      for (arma::uword p = 1; p < nphi; ++p) phi_mat(p, d) = 0.5 * span;
    }
  }

  arma::mat x0(nI, D);
  if (control.x_init) {
    x0 = *control.x_init;
  } else {
    for (const arma::uword d : observed) {
      const arma::uvec rows = arma::find(mask.col(d));
      const arma::vec col = data.values.col(d);
      x0.col(d) = interp_onto_grid(data.grid, data.grid(rows), col(rows));
    }
    for (const arma::uword d : unobserved) x0.col(d).fill(grand_mean);
  }
  if (control.positive_system) {
    x0 = arma::clamp(x0, 0.0, arma::datum::inf);
  }

  // GP prior means: constant at each component's observed sample mean
  // (grand mean for unobserved components), so the zero-mean machinery and
  // the gp_smooth estimates of phi agree on what "deviation" means even for
  // data living far from zero.
  arma::mat mu(nI, D), dotmu(nI, D, arma::fill::zeros);
  if (control.mu) {
    mu = *control.mu;
    dotmu = *control.dotmu;
  } else {
    for (const arma::uword d : observed) {
      const arma::uvec rows = arma::find(mask.col(d));
      const arma::vec col = data.values.col(d);
      mu.col(d).fill(arma::mean(arma::vec(col(rows))));
    }
    for (const arma::uword d : unobserved) mu.col(d).fill(grand_mean);
  }

  const double beta = control.prior_temperature
                          ? *control.prior_temperature
                          : compute_temper(mask, D, nI);
  if (control.verbose) {
    std::cout << "[magi] tempering beta = " << beta << '\n';
  }

  // ---- posterior context --------------------------------------------------
  PosteriorContext ctx;
  ctx.model = model;
  ctx.grid = data.grid;
  ctx.obs_values = data.values;
  ctx.obs_mask = mask;
  ctx.beta = beta;
  ctx.sigma_fixed = control.use_fixed_sigma;
  ctx.positive_system = control.positive_system;
  ctx.bundles.resize(D);
  auto rebuild_bundle = [&](arma::uword d) {
    KernelSpec sp;
    sp.kind = control.kernel_kind;
    sp.phi = phi_mat.col(d);
    ctx.bundles[d] =
        build_gp_bundle(data.grid, sp, mu.col(d), dotmu.col(d),
                        control.band_size);
  };
  for (arma::uword d = 0; d < D; ++d) rebuild_bundle(d);
  ctx.validate();

  // ---- stage 2: initialize theta (and unobserved components) -------------
  arma::vec theta0 =
      control.theta_init ? *control.theta_init : default_theta_start(model);
  std::vector<arma::uword> free_comps;
  if (!control.skip_missing_component_optimization) free_comps = unobserved;

  if (!free_comps.empty() || !control.theta_init) {
    FitState init;
    init.x = x0;
    init.theta = theta0;
    init.sigma = sigma_init;
    const MissingFitResult fit =
        optimize_missing_components(ctx, init, free_comps);
    theta0 = fit.theta;
    for (arma::uword k = 0; k < free_comps.size(); ++k) {
      const arma::uword d = free_comps[k];
      x0.col(d) = fit.x.col(k);
      phi_mat.col(d) = fit.phi[k];
      rebuild_bundle(d);
    }
    if (control.theta_init) theta0 = *control.theta_init;
    if (control.verbose) {
      std::cout << "[magi] initialization value = " << fit.value
                << (fit.converged ? "" : " (optimizer stalled)")
                << ", theta start = (" << theta0.t() << ")\n";
    }
  }

  // ---- stage 3: HMC over q = (x(I), theta [, sigma_observed]) ------------
  const bool sample_sigma = !control.use_fixed_sigma;
  const arma::uvec sig_idx =
      sample_sigma ? arma::uvec(std::vector<arma::uword>(observed.begin(),
                                                         observed.end()))
                   : arma::uvec();
  const arma::uword n_sig = sig_idx.n_elem;
  const arma::uword dim_q = nI * D + nTh + n_sig;

  arma::vec q0(dim_q);
  q0.head(nI * D) = arma::vectorise(x0);
  q0.subvec(nI * D, arma::size(nTh, 1)) = theta0;
  for (arma::uword k = 0; k < n_sig; ++k) {
    q0(nI * D + nTh + k) = sigma_init(sig_idx(k));
  }

  Bounds bounds;
  bounds.lower.set_size(dim_q);
  bounds.lower.fill(-arma::datum::inf);
  bounds.upper.set_size(dim_q);
  bounds.upper.fill(arma::datum::inf);
  if (control.positive_system) bounds.lower.head(nI * D).zeros();
  bounds.lower.subvec(nI * D, arma::size(nTh, 1)) = model.theta_lower;
  bounds.upper.subvec(nI * D, arma::size(nTh, 1)) = model.theta_upper;
  if (n_sig > 0) bounds.lower.tail(n_sig).zeros();

  FitState st;
  st.x.set_size(nI, D);
  st.sigma = sigma_init;
  const LogTargetFn target = [&, st](const arma::vec& q,
                                     arma::vec& grad) mutable -> double {
    st.x = arma::reshape(q.head(nI * D), nI, D);
    st.theta = q.subvec(nI * D, arma::size(nTh, 1));
    for (arma::uword k = 0; k < n_sig; ++k) {
      st.sigma(sig_idx(k)) = q(nI * D + nTh + k);
    }
    PosteriorEval ev;
    try {
      ev = log_posterior(st, ctx);
    } catch (const std::runtime_error&) {
      // Overflow at a wild leapfrog excursion: reject the proposal rather
      // than abort the chain. Genuine setup problems are caught at q0 below.
      return -arma::datum::inf;
    }
    grad.head(nI * D) = arma::vectorise(ev.grad_x);
    grad.subvec(nI * D, arma::size(nTh, 1)) = ev.grad_theta;
    for (arma::uword k = 0; k < n_sig; ++k) {
      grad(nI * D + nTh + k) = ev.grad_sigma(sig_idx(k));
    }
    return ev.value;
  };

  {
    // Evaluated outside the catching lambda so a structural failure (for
    // example a diverged band truncation) surfaces with its own message.
    FitState st0;
    st0.x = x0;
    st0.theta = theta0;
    st0.sigma = sigma_init;
    if (!std::isfinite(log_posterior(st0, ctx).value)) {
      throw std::invalid_argument(
          "magi_solve: the log-posterior is not finite at the initial "
          "state; check x_init/theta_init/sigma against the model");
    }
  }

  HmcConfig hc;
  hc.n_iter = control.n_iter;
  hc.n_leapfrog = control.n_leapfrog;
  hc.burnin_ratio = control.burnin_ratio;
  hc.step_factor = arma::vec{control.step_factor};
  hc.seed = control.seed;
  if (control.verbose) {
    hc.progress = [&](arma::uword done, double rate) {
      std::cout << "[magi] hmc iteration " << done << "/" << control.n_iter
                << ", window acceptance " << rate << '\n';
    };
  }

  const ChainRecord rec = run_chain(q0, hc, target, bounds);

  // ---- unpack -------------------------------------------------------------
  const arma::uword n_kept = rec.positions.n_rows;
  McmcOutput out;
  out.theta_samples = rec.positions.cols(nI * D, nI * D + nTh - 1);
  out.x_samples.set_size(n_kept, nI, D);
  for (arma::uword d = 0; d < D; ++d) {
    out.x_samples.slice(d) = rec.positions.cols(d * nI, d * nI + nI - 1);
  }
  out.sigma_samples.set_size(n_kept, D);
  for (arma::uword d = 0; d < D; ++d) {
    out.sigma_samples.col(d).fill(sigma_init(d));
  }
  for (arma::uword k = 0; k < n_sig; ++k) {
    out.sigma_samples.col(sig_idx(k)) = rec.positions.col(nI * D + nTh + k);
  }
  out.lp = rec.lp_trace;
  out.phi = phi_mat;
  out.grid = data.grid;
  out.data = data;
  out.theta_names = model.theta_names;
  out.sigma_sampled_components = sig_idx;

  if (control.verbose) {
    const arma::uword nw = rec.accept_rate_history.n_elem;
    const double post_rate =
        nw > 0 ? arma::mean(rec.accept_rate_history.tail(
                    std::max<arma::uword>(1, nw / 2)))
               : 0.0;
    std::cout << "[magi] done; post burn-in acceptance " << post_rate << '\n';
  }
  return out;
}

double sample_quantile(const arma::vec& samples, double p) {
  if (samples.n_elem == 0) {
    throw std::invalid_argument("sample_quantile: empty sample");
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("sample_quantile: p must lie in [0, 1]");
  }
  const arma::vec s = arma::sort(samples);
  const double h = static_cast<double>(s.n_elem - 1) * p;
  const auto lo = static_cast<arma::uword>(std::floor(h));
  if (lo + 1 >= s.n_elem) return s(s.n_elem - 1);
  return s(lo) + (h - static_cast<double>(lo)) * (s(lo + 1) - s(lo));
}

SummaryTable summarize(const McmcOutput& out, double lower_q, double upper_q,
                       bool include_sigma, PointEstimate point) {
  if (out.theta_samples.n_rows == 0) {
    throw std::invalid_argument("summarize: empty MCMC output");
  }
  if (!(lower_q >= 0.0 && lower_q <= upper_q && upper_q <= 1.0)) {
    throw std::invalid_argument("summarize: need 0 <= lower_q <= upper_q <= 1");
  }

  std::vector<std::string> names;
  std::vector<arma::vec> columns;
  for (arma::uword i = 0; i < out.theta_samples.n_cols; ++i) {
    names.push_back(i < out.theta_names.size()
                        ? out.theta_names[i]
                        : "theta" + std::to_string(i + 1));
    columns.emplace_back(out.theta_samples.col(i));
  }
  if (include_sigma) {
    for (const arma::uword d : out.sigma_sampled_components) {
      names.push_back("sigma_" + component_label(out.data, d));
      columns.emplace_back(out.sigma_samples.col(d));
    }
  }

  SummaryTable table;
  table.names = std::move(names);
  table.mean.set_size(columns.size());
  table.lo.set_size(columns.size());
  table.hi.set_size(columns.size());
  const arma::uword mode_row =
      out.lp.n_elem == out.theta_samples.n_rows ? out.lp.index_max() : 0;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const arma::vec& v = columns[c];
    switch (point) {
      case PointEstimate::Mean:
        table.mean(c) = arma::mean(v);
        break;
      case PointEstimate::Median:
        table.mean(c) = sample_quantile(v, 0.5);
        break;
      case PointEstimate::Mode:
        table.mean(c) = v(mode_row);
        break;
    }
    table.lo(c) = sample_quantile(v, lower_q);
    table.hi(c) = sample_quantile(v, upper_q);
  }
  return table;
}

arma::vec trajectory_rmse(const McmcOutput& out, const OdeSystem& model,
                          const Trajectory& truth, const arma::vec& eval_times) {
  const arma::uword D = model.dim_x;
  if (out.x_samples.n_slices != D) {
    throw std::invalid_argument(
        "trajectory_rmse: output and model dimensions disagree");
  }
  if (eval_times.n_elem == 0) {
    throw std::invalid_argument("trajectory_rmse: empty eval_times");
  }
  if (truth.values.n_cols != D || truth.values.n_rows != truth.times.n_elem) {
    throw std::invalid_argument("trajectory_rmse: malformed truth trajectory");
  }

  // Posterior means of theta and of the state at the first grid point.
  const arma::vec theta = arma::mean(out.theta_samples, 0).t();
  arma::vec x0(D);
  for (arma::uword d = 0; d < D; ++d) {
    x0(d) = arma::mean(out.x_samples.slice(d).col(0));
  }

  const double t0 = out.grid(0);
  for (arma::uword i = 0; i < eval_times.n_elem; ++i) {
    if (i > 0 && !(eval_times(i) > eval_times(i - 1))) {
      throw std::invalid_argument(
          "trajectory_rmse: eval_times must be strictly increasing");
    }
  }
  if (eval_times(0) < t0 - kTimeTol) {
    throw std::invalid_argument(
        "trajectory_rmse: eval_times start before the inference grid");
  }

  const bool prepend = std::abs(eval_times(0) - t0) > kTimeTol;
  arma::vec t_int(eval_times.n_elem + (prepend ? 1 : 0));
  if (prepend) {
    t_int(0) = t0;
    t_int.tail(eval_times.n_elem) = eval_times;
  } else {
    t_int = eval_times;
    t_int(0) = t0;
  }

  const Trajectory recon = integrate(model, x0, theta, t_int);

  // Rows of `truth` matching each eval time.
  arma::uvec truth_rows(eval_times.n_elem);
  for (arma::uword i = 0; i < eval_times.n_elem; ++i) {
    bool found = false;
    for (arma::uword r = 0; r < truth.times.n_elem; ++r) {
      if (std::abs(truth.times(r) - eval_times(i)) <= kTimeTol) {
        truth_rows(i) = r;
        found = true;
        break;
      }
    }
    if (!found) {
      throw std::invalid_argument(
          "trajectory_rmse: eval time " + std::to_string(eval_times(i)) +
          " does not occur in the truth trajectory");
    }
  }

  const arma::uword offset = prepend ? 1 : 0;
  arma::vec rmse(D);
  for (arma::uword d = 0; d < D; ++d) {
    double ss = 0.0;
    for (arma::uword i = 0; i < eval_times.n_elem; ++i) {
      const double diff =
          recon.values(i + offset, d) - truth.values(truth_rows(i), d);
      ss += diff * diff;
    }
    rmse(d) = std::sqrt(ss / static_cast<double>(eval_times.n_elem));
  }
  return rmse;
}

}  // namespace magi
