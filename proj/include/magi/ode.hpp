#pragma once

#include <armadillo>
#include <functional>
#include <string>
#include <vector>

namespace magi {

// An ODE system dx/dt = f(x, theta, t) with analytic Jacobians.
//
// f maps (theta, X, tvec) -> n x D matrix, where row t of X is the state at
// tvec(t) (vectorized over rows). jac_x is an n x D x D cube whose entry
// (t, i, j) is df_j/dx_i at row t; jac_theta is n x |theta| x D with entry
// (t, i, j) = df_j/dtheta_i.
struct OdeSystem {
  std::string name;
  arma::uword dim_x = 0;
  arma::uword dim_theta = 0;
  std::vector<std::string> state_names;
  std::vector<std::string> theta_names;
  arma::vec theta_lower;
  arma::vec theta_upper;
  std::function<arma::mat(const arma::vec&, const arma::mat&, const arma::vec&)> f;
  std::function<arma::cube(const arma::vec&, const arma::mat&, const arma::vec&)> jac_x;
  std::function<arma::cube(const arma::vec&, const arma::mat&, const arma::vec&)> jac_theta;
};

// Built-in benchmark systems: hes1, hes1-log, fn, hiv-td.
// Throws std::invalid_argument for unknown names, listing the choices.
OdeSystem builtin_model(const std::string& name);
std::vector<std::string> builtin_model_names();

struct GradCheckReport {
  bool pass = false;
  double max_abs_err_dx = 0.0;
  double max_abs_err_dtheta = 0.0;
};

// Compares jac_x / jac_theta against central finite differences of f with
// step h = max(1e-6, 1e-6*|value|); pass iff both max errors < tol.
GradCheckReport check_gradients(const OdeSystem& model, const arma::mat& x_test,
                                const arma::vec& theta_test, const arma::vec& times,
                                double tol);

struct Trajectory {
  arma::vec times;
  arma::mat values;  // |times| x D
};

// Classical fixed-step RK4 with internal step <= dt_max, sampled at `times`.
// dt_max <= 0 selects the default (t_max - t_min)/10000. Used for data
// generation and post-hoc reconstruction only, never inside inference.
// Throws std::runtime_error (reporting the time) if the state leaves the
// finite range.
Trajectory integrate(const OdeSystem& model, const arma::vec& x0,
                     const arma::vec& theta, const arma::vec& times,
                     double dt_max = 0.0);

}  // namespace magi
