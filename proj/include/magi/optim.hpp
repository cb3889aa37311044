#pragma once

#include <armadillo>
#include <functional>
#include <string>

namespace magi {

// Objective for minimize_bfgs: returns f(x) and writes df/dx into grad
// (pre-sized to x.n_elem). A non-finite value or gradient ends the run at
// the best point seen so far.
using ObjectiveFn = std::function<double(const arma::vec& x, arma::vec& grad)>;

struct OptimOptions {
  arma::uword max_iter = 200;
  double initial_step = 0.1;
  double line_search_tol = 0.1;
  // Converged once max|grad_i| <= grad_tol * max(1, |f|) at an iterate.
  double grad_tol = 1e-5;
};

struct OptimResult {
  arma::vec x;                       // best point evaluated
  double value = arma::datum::inf;   // f at x
  bool converged = false;            // gradient test passed
  arma::uword iterations = 0;
  std::string message;
};

// Quasi-Newton (BFGS) minimization. Non-convergence (line-search stall,
// iteration cap, non-finite objective) is not an error: the best point
// evaluated is returned with converged = false and a short message.
OptimResult minimize_bfgs(const ObjectiveFn& fn, const arma::vec& x0,
                          const OptimOptions& opts = {});

// Smooth bijection between a box [lower, upper] (entries may be +/-inf)
// and an unconstrained space, used to run unconstrained quasi-Newton on
// bounded parameters:
//   (-inf, inf): x = u
//   [a,   inf): x = a + e^u
//   (-inf, b ]: x = b - e^u
//   [a,    b ]: x = a + (b - a) * logistic(u)
// to_unconstrained clamps x strictly inside the box first, so points on a
// bound map to a finite (if extreme) u.
struct BoundTransform {
  arma::vec lower;
  arma::vec upper;

  BoundTransform(arma::vec lo, arma::vec up);

  arma::vec to_unconstrained(const arma::vec& x) const;
  arma::vec to_constrained(const arma::vec& u) const;
  // Elementwise dx/du, for the chain rule grad_u = grad_x % dx_du(u).
  arma::vec dx_du(const arma::vec& u) const;
};

}  // namespace magi
