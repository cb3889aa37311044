#pragma once

#include <armadillo>
#include <cstdint>
#include <functional>

namespace magi {

// Deterministic random stream: a std::mt19937_64 engine (fully specified by
// the C++ standard) combined with hand-written 53-bit uniform and Box-Muller
// normal transforms, so draws do not depend on any library's distribution
// implementation. Same seed => same stream, on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1): (x >> 11) * 2^-53.
  double uniform();
  // Uniform on (0, 1]: ((x >> 11) + 1) * 2^-53 (safe for log()).
  double uniform_open();
  // Standard normal via Box-Muller on (uniform_open, uniform); the second
  // variate of each pair is cached.
  double normal();

  arma::vec normal_vec(arma::uword n);
  arma::vec uniform_vec(arma::uword n);

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Per-coordinate box constraints; use -inf/+inf for unconstrained sides.
struct Bounds {
  arma::vec lower;
  arma::vec upper;
};

// Log target density with gradient: fills `grad` (pre-sized to q.n_elem) and
// returns the log density. May return -inf for rejected states (gradient then
// ignored).
using LogTargetFn = std::function<double(const arma::vec& q, arma::vec& grad)>;

struct HmcConfig {
  arma::uword n_iter = 20000;
  arma::uword n_leapfrog = 200;
  double burnin_ratio = 0.5;
  // Initial leapfrog step size: scalar (broadcast) or one entry per
  // coordinate.
  arma::vec step_factor{0.01};
  std::uint64_t seed = 0;
  // Optional hook called after each completed 100-iteration window with the
  // number of iterations done so far and that window's acceptance rate.
  std::function<void(arma::uword iterations_done, double accept_rate)> progress;
};

struct ChainRecord {
  arma::mat positions;            // n_kept x dim(q), post burn-in
  arma::vec lp_trace;             // n_kept log-target values
  arma::vec accept_rate_history;  // one rate per 100-iteration window
  arma::vec final_eps;            // step sizes after the last tuning
};

struct LeapfrogResult {
  arma::vec q;
  arma::vec p;
  bool valid = true;  // false if a gradient was non-finite on the path
};

// L leapfrog steps of the Hamiltonian with potential U (grad_u returns its
// gradient): half-step momentum, full-step position, half-step momentum.
// After each position step, any coordinate outside its bounds is mirrored
// about the violated bound with its momentum negated, repeatedly until it
// lies inside.
LeapfrogResult leapfrog(const arma::vec& q0, const arma::vec& p0,
                        const arma::vec& eps, arma::uword n_steps,
                        const std::function<arma::vec(const arma::vec&)>& grad_u,
                        const Bounds& bounds);

struct IterationResult {
  arma::vec q;
  bool accepted = false;
  double lp = 0.0;  // log target at the returned q
};

// One HMC transition: p ~ N(0, I); per-coordinate step sizes drawn uniformly
// from [eps_base, 2 eps_base]; leapfrog; Metropolis accept with
// min[1, exp(H - H*)]. Invalid proposals (non-finite target or gradient)
// reject.
IterationResult hmc_iteration(const arma::vec& q, const arma::vec& eps_base,
                              arma::uword n_leapfrog, const LogTargetFn& target,
                              const Bounds& bounds, Rng& rng);

struct WindowStats {
  double accept_rate = 0.0;   // fraction accepted over the window
  arma::vec coordinate_sd;    // per-coordinate SD of the window's positions
};

// Burn-in step-size controller: acceptance > 90% grows every eps by 1.2,
// < 60% shrinks by 0.8; afterwards eps is reshaped proportional to the
// per-coordinate sample SDs, normalized so the geometric mean of eps is
// unchanged (the shape controller must not fight the global one). The SD
// reshaping is skipped when any SD is zero or non-finite (e.g. a window with
// no accepted moves).
arma::vec tune_step_sizes(const WindowStats& stats, const arma::vec& eps);

// Full chain: n_iter transitions from q0, tuning after every 100 iterations
// while inside the burn-in prefix (floor(burnin_ratio * n_iter)), step sizes
// frozen afterwards. Returns the post-burn-in positions and log-target trace,
// all window acceptance rates, and the final step sizes. Deterministic given
// config.seed. Throws std::invalid_argument if q0 violates bounds/shape or
// the target is non-finite at q0.
ChainRecord run_chain(const arma::vec& q0, const HmcConfig& config,
                      const LogTargetFn& target, const Bounds& bounds);

}  // namespace magi
