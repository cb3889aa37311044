#pragma once

#include <armadillo>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "magi/kernels.hpp"
#include "magi/ode.hpp"

namespace magi {

// Observations on a shared time grid. A NaN cell means "component not
// observed at this time"; the mask derived from NaN is authoritative.
// Discretization rows inserted later are all-NaN.
struct ObservationSet {
  arma::vec grid;    // strictly increasing times
  arma::mat values;  // |grid| x D, NaN where missing
  std::vector<std::string> component_names;

  arma::umat mask() const;  // 1 exactly at the finite cells

  // Throws std::invalid_argument on shape mismatch, a non-increasing grid,
  // or a dataset with no observed value at all.
  void validate() const;
};

// Inserts 2^level - 1 equally spaced all-missing rows between each adjacent
// pair of existing rows; level 0 returns the input unchanged.
ObservationSet set_discretization_level(const ObservationSet& data,
                                        arma::uword level);

// Unions the existing times with the arithmetic grid first:last:incr.
// Inserted rows are all-missing; a grid time within 1e-9 of an existing row
// is dropped (the observation row wins). Throws std::invalid_argument for
// incr <= 0.
ObservationSet set_discretization_by(const ObservationSet& data, double incr);

// MagiSolver control settings; defaults follow the reference interface.
struct SolveControl {
  std::optional<arma::vec> sigma;  // noise SD start (or fixed value) per
                                   // component; NaN entries = estimate
  bool use_fixed_sigma = false;    // sigma known: excluded from sampling
  std::optional<arma::mat> x_init;      // |I| x D trajectory start
  std::optional<arma::vec> theta_init;  // parameter start, within bounds
  std::optional<double> prior_temperature;  // overrides compute_temper
  KernelKind kernel_kind = KernelKind::GeneralMatern;
  std::optional<arma::mat> phi;    // phi_size x D; all-NaN column = estimate
  std::optional<arma::mat> mu;     // GP prior mean per component (with dotmu)
  std::optional<arma::mat> dotmu;  // its time derivative
  arma::uword band_size = 20;
  arma::uword n_iter = 20000;
  arma::uword n_leapfrog = 200;
  double burnin_ratio = 0.5;
  double step_factor = 0.01;
  bool skip_missing_component_optimization = false;
  bool positive_system = false;  // constrain x(I) >= 0 during sampling
  bool verbose = false;
  std::uint64_t seed = 0;
};

struct McmcOutput {
  arma::mat theta_samples;  // n_kept x |theta|
  arma::cube x_samples;     // n_kept x |I| x D
  arma::mat sigma_samples;  // n_kept x D; constant where fixed or unobserved
  arma::vec lp;             // n_kept log-posterior values
  arma::mat phi;            // phi_size x D, as used during sampling
  arma::vec grid;           // the discretization set I
  ObservationSet data;      // the (discretized) input data
  std::vector<std::string> theta_names;
  arma::uvec sigma_sampled_components;  // empty when sigma was fixed
};

// The full solver: stage 1 fits phi/sigma per observed component (gp_smooth,
// unless supplied via control) and initializes x(I) by linear interpolation
// (flat beyond the outermost observations); stage 2 initializes theta -- and
// phi/x(I) of unobserved components -- by maximizing the log-posterior;
// stage 3 samples (x(I), theta[, sigma]) by HMC with the GP bundles held
// fixed. Fully deterministic given control.seed.
// Throws std::invalid_argument for inconsistent inputs (including a
// bounds-violating theta_init) and propagates band-size advice errors.
McmcOutput magi_solve(const ObservationSet& data, const OdeSystem& model,
                      const SolveControl& control);

enum class PointEstimate { Mean, Median, Mode };

// Per-parameter point estimate and credible interval. `mean` holds the
// selected point estimate (posterior mean by default; mode is approximated
// by the sample with the highest log-posterior).
struct SummaryTable {
  std::vector<std::string> names;
  arma::vec mean;
  arma::vec lo;
  arma::vec hi;
};

// Summarizes theta (and, when include_sigma and sigma was sampled, the
// sigma of each observed component): point estimate plus the
// [lower_q, upper_q] empirical quantiles.
SummaryTable summarize(const McmcOutput& out, double lower_q = 0.025,
                       double upper_q = 0.975, bool include_sigma = false,
                       PointEstimate point = PointEstimate::Mean);

// Empirical quantile by linear interpolation of order statistics
// (h = (n-1)p; the "type 7" rule). p must lie in [0, 1].
double sample_quantile(const arma::vec& samples, double p);

// The trajectory-RMSE benchmark metric: integrate `model` from the
// posterior-mean x at the first grid point and the posterior-mean theta,
// then per-component RMSE against `truth` at eval_times. Every eval time
// must occur in truth.times (within 1e-9).
arma::vec trajectory_rmse(const McmcOutput& out, const OdeSystem& model,
                          const Trajectory& truth, const arma::vec& eval_times);

}  // namespace magi
