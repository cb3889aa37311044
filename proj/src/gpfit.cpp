#include "magi/gpfit.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "magi/optim.hpp"

namespace magi {

namespace {

// Lower Cholesky with the escalating-jitter schedule (1e-10*scale up to
// 1e-4*scale) after a plain attempt. Returns false if every attempt fails.
bool chol_jittered(const arma::mat& s, double scale, arma::mat& l) {
  if (arma::chol(l, s, "lower")) return true;
  for (double j = 1e-10 * scale; j <= 1e-4 * scale * (1.0 + 1e-12); j *= 10.0) {
    arma::mat sj = s;
    sj.diag() += j;
    if (arma::chol(l, sj, "lower")) return true;
  }
  return false;
}

// Penalized negative marginal log-likelihood of the centered data and its
// gradient in the optimization coordinates
// v = (log phi_1, ..., log phi_p [, u_sigma]), sigma = floor + e^{u_sigma}.
struct MarginalObjective {
  arma::vec times;
  arma::vec r;  // centered observations
  KernelKind kind = KernelKind::GeneralMatern;
  double prior_mean = 0.0;  // Normal prior on phi2, raw scale
  double prior_sd = 1.0;
  std::optional<double> sigma_fixed;
  double sigma_floor = 1e-8;

  arma::uword n_phi() const { return phi_size(kind); }
  arma::uword dim() const { return n_phi() + (sigma_fixed ? 0 : 1); }

  double sigma_at(const arma::vec& v) const {
    return sigma_fixed ? *sigma_fixed : sigma_floor + std::exp(v(n_phi()));
  }

  arma::vec phi_at(const arma::vec& v) const {
    return arma::exp(v.head(n_phi()));
  }

  // Returns NaN (ending the line search at the best point so far) when the
  // covariance cannot be factorized or the parameters overflow.
  double operator()(const arma::vec& v, arma::vec& grad) const {
    const arma::uword p = n_phi();
    if (v.max() > 300.0) return arma::datum::nan;  // e^v would overflow
    const arma::vec phi = phi_at(v);
    const double sigma = sigma_at(v);

    KernelSpec spec;
    spec.kind = kind;
    spec.phi = phi;

    arma::mat k;
    std::vector<arma::mat> dk;
    kernel_matrix_with_grads(spec, times, k, dk);
    arma::mat s = k;
    s.diag() += sigma * sigma;

    arma::mat l;
    if (!chol_jittered(s, phi(0) + sigma * sigma, l)) return arma::datum::nan;

    const arma::uword n = r.n_elem;
    const arma::vec half = arma::solve(arma::trimatl(l), r);
    const arma::vec alpha = arma::solve(arma::trimatu(l.t()), half);
    const double logdet = 2.0 * arma::sum(arma::log(l.diag()));
    const double ll = -0.5 * arma::dot(half, half) - 0.5 * logdet -
                      0.5 * static_cast<double>(n) * std::log(2.0 * arma::datum::pi);
    const double z2 = (phi(1) - prior_mean) / prior_sd;
    const double value = ll - 0.5 * z2 * z2;

    // d(ll)/d(param) = tr((alpha alpha' - S^{-1}) dS/dparam) / 2.
    const arma::mat l_inv = arma::inv(arma::trimatl(l));
    const arma::mat s_inv = l_inv.t() * l_inv;
    const arma::mat w = alpha * alpha.t() - s_inv;
    for (arma::uword i = 0; i < p; ++i) {
      double g = 0.5 * arma::accu(w % dk[i]) * phi(i);  // chain rule to log phi
      if (i == 1) g -= phi(1) * z2 / prior_sd;          // prior term
      grad(i) = -g;
    }
    if (!sigma_fixed) {
      const double dll_dsigma = sigma * arma::trace(w);  // dS/dsigma = 2 sigma I
      grad(p) = -std::exp(v(p)) * dll_dsigma;            // chain rule to u_sigma
    }
    return -value;
  }
};

arma::mat chol_obs(const KernelSpec& spec, const arma::vec& t_obs, double sigma) {
  spec.validate();
  if (sigma < 0.0 || !std::isfinite(sigma)) {
    throw std::invalid_argument("gp_cond: sigma must be finite and >= 0");
  }
  arma::mat s = kernel_matrix(spec, t_obs, t_obs);
  s.diag() += sigma * sigma;
  arma::mat l;
  if (arma::chol(l, s, "lower")) return l;
  if (sigma == 0.0) {
    throw std::runtime_error(
        "gp_cond: singular observation covariance at sigma = 0 "
        "(duplicated observation times?)");
  }
  if (chol_jittered(s, spec.phi(0) + sigma * sigma, l)) return l;
  throw std::runtime_error(
      "gp_cond: observation covariance factorization failed even with jitter");
}

}  // namespace

SmoothingResult gp_smooth(const arma::vec& y_obs, const arma::vec& t_obs,
                          KernelKind kind, std::optional<double> sigma_fixed) {
  const arma::uword n = y_obs.n_elem;
  if (t_obs.n_elem != n) {
    throw std::invalid_argument("gp_smooth: y_obs and t_obs differ in length");
  }
  if (n < 3) {
    throw std::invalid_argument("gp_smooth: needs at least 3 observations");
  }
  if (!y_obs.is_finite() || !t_obs.is_finite()) {
    throw std::invalid_argument("gp_smooth: non-finite observation or time");
  }
  for (arma::uword i = 1; i < n; ++i) {
    if (t_obs(i) <= t_obs(i - 1)) {
      throw std::invalid_argument("gp_smooth: t_obs must be strictly increasing");
    }
  }
  if (sigma_fixed && (!std::isfinite(*sigma_fixed) || *sigma_fixed < 0.0)) {
    throw std::invalid_argument("gp_smooth: sigma_fixed must be finite and >= 0");
  }

  const double span = t_obs(n - 1) - t_obs(0);
  const double range = y_obs.max() - y_obs.min();

  MarginalObjective obj;
  obj.times = t_obs;
  obj.r = y_obs - arma::mean(y_obs);
  obj.kind = kind;
  obj.prior_mean = 0.5 * span;
  obj.prior_sd = span;
  obj.sigma_fixed = sigma_fixed;
  obj.sigma_floor = std::max(1e-4 * range, 1e-8);

  const double phi1_start = std::max(arma::var(y_obs), 1e-8);
  const double sd_y = arma::stddev(y_obs);
  // u start for sigma = floor + e^u; keep the argument positive even when
  // 0.1*sd(y) sits below the floor (near-noiseless data).
  const double u_sigma_start =
      std::log(std::max(0.1 * sd_y - obj.sigma_floor, 1e-3 * obj.sigma_floor));

  const arma::vec phi2_starts =
      arma::logspace(std::log10(span / 50.0), std::log10(span), 5);

  OptimOptions opts;
  opts.max_iter = 200;

  bool any_evaluated = false;
  OptimResult best;
  for (const double phi2_start : phi2_starts) {
    arma::vec v0(obj.dim());
    v0(0) = std::log(phi1_start);
    v0(1) = std::log(phi2_start);
    if (phi_size(kind) == 3) v0(2) = std::log(0.5 * span);
    if (!sigma_fixed) v0(obj.dim() - 1) = u_sigma_start;

    const OptimResult res = minimize_bfgs(
        [&obj](const arma::vec& v, arma::vec& grad) { return obj(v, grad); },
        v0, opts);
    if (!std::isfinite(res.value)) continue;  // start never evaluated cleanly
    any_evaluated = true;
    if (res.value < best.value) best = res;
  }
  if (!any_evaluated) {
    throw std::runtime_error(
        "gp_smooth: the marginal likelihood could not be evaluated at any "
        "multi-start point; check the observations");
  }

  SmoothingResult out;
  out.phi = obj.phi_at(best.x);
  out.sigma = obj.sigma_at(best.x);
  out.converged = best.converged;
  out.objective = -best.value;
  return out;
}

arma::vec gp_cond_mean(const arma::vec& y_obs, const arma::vec& t_obs,
                       const arma::vec& t_out, const KernelSpec& spec,
                       double sigma) {
  if (y_obs.n_elem != t_obs.n_elem) {
    throw std::invalid_argument("gp_cond_mean: y_obs and t_obs differ in length");
  }
  if (y_obs.is_empty()) {
    throw std::invalid_argument("gp_cond_mean: no observations");
  }
  const double ybar = arma::mean(y_obs);
  const arma::mat l = chol_obs(spec, t_obs, sigma);
  const arma::vec alpha = arma::solve(
      arma::trimatu(l.t()), arma::solve(arma::trimatl(l), y_obs - ybar));
  return ybar + kernel_matrix(spec, t_out, t_obs) * alpha;
}

arma::mat gp_cond_cov(const arma::vec& y_obs, const arma::vec& t_obs,
                      const arma::vec& t_out, const KernelSpec& spec,
                      double sigma) {
  if (y_obs.n_elem != t_obs.n_elem) {
    throw std::invalid_argument("gp_cond_cov: y_obs and t_obs differ in length");
  }
  if (y_obs.is_empty()) {
    throw std::invalid_argument("gp_cond_cov: no observations");
  }
  const arma::mat l = chol_obs(spec, t_obs, sigma);
  const arma::mat k_ox = kernel_matrix(spec, t_out, t_obs);
  const arma::mat half = arma::solve(arma::trimatl(l), k_ox.t());
  arma::mat out = kernel_matrix(spec, t_out, t_out) - half.t() * half;
  return 0.5 * (out + out.t());
}

}  // namespace magi
