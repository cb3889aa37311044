#pragma once

#include <armadillo>
#include <optional>

#include "magi/kernels.hpp"

namespace magi {

struct SmoothingResult {
  arma::vec phi;           // (phi1, phi2[, phi3])
  double sigma = 0.0;      // estimated (or fixed) noise SD
  bool converged = true;   // false: no restart met the gradient test;
                           // the best point found is still returned
  double objective = 0.0;  // penalized marginal log-likelihood at the result
};

// Stage-1 GP hyper-parameter fit for one observed component: MAP of the
// centered marginal likelihood  y - ybar ~ N(0, C_phi + sigma^2 I)  with a
// weakly informative Normal prior on phi2 (mean = span/2, SD = span, raw
// scale; span = t_obs range), maximized over (log phi1, log phi2
// [, log phi3], log(sigma - floor)) by multi-start quasi-Newton.
//
// Multi-starts: 5 points with phi2 log-spaced over [span/50, span];
// phi1 starts at var(y), sigma at 0.1*sd(y) (absent sigma_fixed), and
// phi3 (periodic kernels) at span/2. sigma is floored at
// max(1e-4 * range(y), 1e-8) so C + sigma^2 I stays well-posed even for
// noiseless data.
//
// Requires >= 3 observations and strictly increasing t_obs. Non-convergence
// of every restart is not an error: the best point found is returned with
// converged = false.
SmoothingResult gp_smooth(const arma::vec& y_obs, const arma::vec& t_obs,
                          KernelKind kind,
                          std::optional<double> sigma_fixed = std::nullopt);

// GP conditional mean at t_out given observations (y_obs, t_obs) with noise
// SD sigma:  ybar + K(out, obs) [K(obs, obs) + sigma^2 I]^{-1} (y - ybar).
// Throws std::runtime_error when the observation covariance is singular
// (sigma = 0 with duplicated times).
arma::vec gp_cond_mean(const arma::vec& y_obs, const arma::vec& t_obs,
                       const arma::vec& t_out, const KernelSpec& spec,
                       double sigma);

// GP conditional covariance at t_out:
// K(out, out) - K(out, obs) [K(obs, obs) + sigma^2 I]^{-1} K(obs, out),
// symmetrized. Errors as gp_cond_mean.
arma::mat gp_cond_cov(const arma::vec& y_obs, const arma::vec& t_obs,
                      const arma::vec& t_out, const KernelSpec& spec,
                      double sigma);

}  // namespace magi
