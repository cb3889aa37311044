#include <cmath>
#include <stdexcept>
#include <string>

#include "magi/ode.hpp"

namespace magi {

namespace {

// One RK4 step of size h from (t, x); f acts on 1-row matrices.
arma::rowvec rk4_step(const OdeSystem& model, const arma::vec& theta,
                      const arma::rowvec& x, double t, double h) {
  const arma::vec t1{t}, t2{t + 0.5 * h}, t3{t + h};
  const arma::rowvec k1 = model.f(theta, x, t1);
  const arma::rowvec k2 = model.f(theta, x + 0.5 * h * k1, t2);
  const arma::rowvec k3 = model.f(theta, x + 0.5 * h * k2, t2);
  const arma::rowvec k4 = model.f(theta, x + h * k3, t3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

Trajectory integrate(const OdeSystem& model, const arma::vec& x0,
                     const arma::vec& theta, const arma::vec& times,
                     double dt_max) {
  if (x0.n_elem != model.dim_x) {
    throw std::invalid_argument("integrate: x0 length must equal the model dimension");
  }
  if (theta.n_elem != model.dim_theta) {
    throw std::invalid_argument("integrate: theta length mismatch");
  }
  if (times.n_elem < 1) {
    throw std::invalid_argument("integrate: need at least one output time");
  }
  for (arma::uword i = 1; i < times.n_elem; ++i) {
    if (!(times(i) > times(i - 1))) {
      throw std::invalid_argument("integrate: times must be strictly increasing");
    }
  }
  const double span = times(times.n_elem - 1) - times(0);
  if (dt_max <= 0.0) dt_max = (span > 0.0) ? span / 10000.0 : 1.0;

  Trajectory out;
  out.times = times;
  out.values.set_size(times.n_elem, model.dim_x);
  arma::rowvec x = x0.t();
  out.values.row(0) = x;
  for (arma::uword k = 1; k < times.n_elem; ++k) {
    const double t0 = times(k - 1);
    const double t1 = times(k);
    const auto steps = static_cast<arma::uword>(std::ceil((t1 - t0) / dt_max - 1e-12));
    const double h = (t1 - t0) / static_cast<double>(std::max<arma::uword>(steps, 1));
    double t = t0;
    for (arma::uword s = 0; s < std::max<arma::uword>(steps, 1); ++s) {
      x = rk4_step(model, theta, x, t, h);
      t += h;
      if (!x.is_finite()) {
        throw std::runtime_error("integrate: non-finite state at t = " + std::to_string(t) +
                                 " (system blow-up; reduce the time span or check theta)");
      }
    }
    out.values.row(k) = x;
  }
  return out;
}

}  // namespace magi
