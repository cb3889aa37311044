#pragma once

#include <armadillo>
#include <vector>

#include "magi/kernels.hpp"
#include "magi/ode.hpp"

namespace magi {

// Tempering factor beta = D * |I| / (total number of observations).
// Throws std::invalid_argument when there are no observations at all or the
// mask does not have shape grid_size x dim_x.
double compute_temper(const arma::umat& obs_mask, arma::uword dim_x,
                      arma::uword grid_size);

// The sampled quantities: trajectory values at the discretization points,
// ODE parameters, and per-component noise SDs (entries for unobserved
// components are carried but inert).
struct FitState {
  arma::mat x;      // |I| x D
  arma::vec theta;  // dim_theta
  arma::vec sigma;  // length D
};

// Everything log_posterior needs besides the state. Immutable during
// sampling; safe to share across concurrent chains.
struct PosteriorContext {
  OdeSystem model;
  arma::vec grid;                 // discretization set I, strictly increasing
  arma::mat obs_values;           // |I| x D, NaN where not observed
  arma::umat obs_mask;            // 1 exactly at the observation slots tau_d
  std::vector<GpBundle> bundles;  // one per component, times == grid
  double beta = 1.0;              // tempering (>= handled by compute_temper)
  bool sigma_fixed = false;       // sigma is not a sampled coordinate
  bool positive_system = false;   // x(I) constrained to be >= 0

  // Throws std::invalid_argument on inconsistent shapes, non-positive beta,
  // mask entries pointing at non-finite observations, or bundle grids that
  // disagree with `grid`.
  void validate() const;
};

struct PosteriorEval {
  double value = 0.0;
  arma::mat grad_x;      // |I| x D
  arma::vec grad_theta;  // dim_theta
  arma::vec grad_sigma;  // length D, zero at unobserved components
};

// Tempered log-posterior of Eq. (3) and its analytic gradients:
//
//   value = sum_d { (1/beta) [ -1/2 (x_d-mu_d)' Cinv_d (x_d-mu_d)
//                              -1/2 logdet C_d
//                              -1/2 e_d' Psinv_d e_d - 1/2 logdet Psi_d ]
//                   -1/2 sum_{t in tau_d} [ (y_dt-x_dt)^2/sigma_d^2
//                                           + log(2 pi sigma_d^2) ] }
//           + log pi(theta),
//
// with e_d = f(x, theta, I)_d - dotmu_d - m_d (x_d - mu_d) and pi(theta)
// flat inside [theta_lower, theta_upper]. Additive normalization constants
// of the GP densities are dropped uniformly.
//
// Rejected states (theta outside its bounds, x < 0 under positive_system,
// sigma <= 0 for an observed component, non-finite state or dynamics)
// return value = -inf with zero gradients rather than throwing. A NaN/+inf
// component contribution from a finite state throws std::runtime_error
// naming the component and advising a larger band_size.
PosteriorEval log_posterior(const FitState& state, const PosteriorContext& ctx);

struct MissingFitResult {
  arma::vec theta;
  std::vector<arma::vec> phi;  // fitted phi per entry of free_components
  arma::mat x;                 // |I| x free_components.size()
  bool converged = true;       // false: best iterate returned after a stall
  double value = 0.0;          // log-posterior at the returned point
};

// Stage-2 initialization: quasi-Newton maximization of log_posterior
// jointly over theta, the kernel hyper-parameters phi of the components in
// free_components, and their x(I) columns. Observed components' phi, sigma,
// and x(I) (taken from ctx / init and including init.sigma) are held fixed;
// their bundles are cached and never rebuilt, while each free component's
// bundle is rebuilt whenever its phi moves. With free_components empty only
// theta is optimized. Non-convergence returns the best iterate with
// converged = false (sampling can still correct it).
MissingFitResult optimize_missing_components(
    const PosteriorContext& ctx, const FitState& init,
    const std::vector<arma::uword>& free_components);

}  // namespace magi
