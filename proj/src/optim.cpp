#include "magi/optim.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <cmath>
#include <stdexcept>

namespace magi {

namespace {

// Shared state for the GSL callbacks. f and df both run the full
// value+gradient evaluation; the objectives used here (marginal likelihoods,
// log-posteriors) compute both together anyway.
struct Pack {
  const ObjectiveFn* fn = nullptr;
  arma::uword n = 0;
  arma::vec x_buf;
  arma::vec g_buf;
  arma::vec best_x;
  double best_f = arma::datum::inf;

  double eval(const gsl_vector* v, gsl_vector* g) {
    for (arma::uword i = 0; i < n; ++i) x_buf(i) = gsl_vector_get(v, i);
    double f = GSL_NAN;
    bool ok = x_buf.is_finite();
    if (ok) {
      g_buf.zeros();
      f = (*fn)(x_buf, g_buf);
      ok = std::isfinite(f) && g_buf.is_finite();
    }
    if (ok && f < best_f) {
      best_f = f;
      best_x = x_buf;
    }
    if (g != nullptr) {
      for (arma::uword i = 0; i < n; ++i) {
        gsl_vector_set(g, i, ok ? g_buf(i) : GSL_NAN);
      }
    }
    return ok ? f : GSL_NAN;
  }
};

double c_f(const gsl_vector* v, void* p) {
  return static_cast<Pack*>(p)->eval(v, nullptr);
}

void c_df(const gsl_vector* v, void* p, gsl_vector* g) {
  static_cast<Pack*>(p)->eval(v, g);
}

void c_fdf(const gsl_vector* v, void* p, double* f, gsl_vector* g) {
  *f = static_cast<Pack*>(p)->eval(v, g);
}

}  // namespace

OptimResult minimize_bfgs(const ObjectiveFn& fn, const arma::vec& x0,
                          const OptimOptions& opts) {
  const arma::uword n = x0.n_elem;
  if (n == 0) {
    throw std::invalid_argument("minimize_bfgs: empty start point");
  }
  if (!x0.is_finite()) {
    throw std::invalid_argument("minimize_bfgs: non-finite start point");
  }

  Pack pack;
  pack.fn = &fn;
  pack.n = n;
  pack.x_buf.set_size(n);
  pack.g_buf.set_size(n);
  pack.best_x = x0;

  gsl_multimin_function_fdf target;
  target.n = n;
  target.f = &c_f;
  target.df = &c_df;
  target.fdf = &c_fdf;
  target.params = &pack;

  gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(
      gsl_multimin_fdfminimizer_vector_bfgs2, n);
  gsl_vector* v0 = gsl_vector_alloc(n);
  for (arma::uword i = 0; i < n; ++i) gsl_vector_set(v0, i, x0(i));

  // GSL's default error handler aborts the process; errors are handled via
  // status codes inside this scope instead.
  gsl_error_handler_t* old_handler = gsl_set_error_handler_off();

  OptimResult out;
  const int set_status =
      gsl_multimin_fdfminimizer_set(s, &target, v0, opts.initial_step,
                                    opts.line_search_tol);
  if (set_status != GSL_SUCCESS) {
    out.message = std::string("initial evaluation failed: ") +
                  gsl_strerror(set_status);
  } else {
    out.message = "iteration limit reached";
    for (arma::uword it = 0; it < opts.max_iter; ++it) {
      const int status = gsl_multimin_fdfminimizer_iterate(s);
      out.iterations = it + 1;
      if (status == GSL_ENOPROG) {
        out.message = "line search made no progress";
        break;
      }
      if (status != GSL_SUCCESS) {
        out.message = gsl_strerror(status);
        break;
      }
      double gmax = 0.0;
      for (arma::uword i = 0; i < n; ++i) {
        gmax = std::max(gmax, std::fabs(gsl_vector_get(s->gradient, i)));
      }
      if (gmax <= opts.grad_tol * std::max(1.0, std::fabs(s->f))) {
        out.converged = true;
        out.message = "gradient tolerance reached";
        break;
      }
    }
  }

  gsl_set_error_handler(old_handler);
  gsl_multimin_fdfminimizer_free(s);
  gsl_vector_free(v0);

  // The final GSL iterate can be worse than an earlier probe (failed line
  // searches still evaluate points); return the best point ever seen.
  out.x = pack.best_x;
  out.value = pack.best_f;
  return out;
}

namespace {

enum class BoundKind { Free, Lower, Upper, Both };

BoundKind bound_kind(double lo, double up) {
  const bool lf = std::isfinite(lo);
  const bool uf = std::isfinite(up);
  if (lf && uf) return BoundKind::Both;
  if (lf) return BoundKind::Lower;
  if (uf) return BoundKind::Upper;
  return BoundKind::Free;
}

}  // namespace

BoundTransform::BoundTransform(arma::vec lo, arma::vec up)
    : lower(std::move(lo)), upper(std::move(up)) {
  if (lower.n_elem != upper.n_elem) {
    throw std::invalid_argument("BoundTransform: bound vectors differ in length");
  }
  for (arma::uword i = 0; i < lower.n_elem; ++i) {
    if (std::isnan(lower(i)) || std::isnan(upper(i))) {
      throw std::invalid_argument("BoundTransform: NaN bound");
    }
    if (!(lower(i) < upper(i))) {
      throw std::invalid_argument("BoundTransform: requires lower < upper");
    }
  }
}

arma::vec BoundTransform::to_unconstrained(const arma::vec& x) const {
  if (x.n_elem != lower.n_elem) {
    throw std::invalid_argument("BoundTransform: point has wrong length");
  }
  arma::vec u(x.n_elem);
  for (arma::uword i = 0; i < x.n_elem; ++i) {
    const double a = lower(i), b = upper(i);
    switch (bound_kind(a, b)) {
      case BoundKind::Free:
        u(i) = x(i);
        break;
      case BoundKind::Lower: {
        const double d = std::max(x(i) - a, 1e-10 * (1.0 + std::fabs(a)));
        u(i) = std::log(d);
        break;
      }
      case BoundKind::Upper: {
        const double d = std::max(b - x(i), 1e-10 * (1.0 + std::fabs(b)));
        u(i) = std::log(d);
        break;
      }
      case BoundKind::Both: {
        const double w = b - a;
        double frac = (x(i) - a) / w;
        frac = std::min(std::max(frac, 1e-12), 1.0 - 1e-12);
        u(i) = std::log(frac / (1.0 - frac));
        break;
      }
    }
  }
  return u;
}

arma::vec BoundTransform::to_constrained(const arma::vec& u) const {
  if (u.n_elem != lower.n_elem) {
    throw std::invalid_argument("BoundTransform: point has wrong length");
  }
  arma::vec x(u.n_elem);
  for (arma::uword i = 0; i < u.n_elem; ++i) {
    const double a = lower(i), b = upper(i);
    switch (bound_kind(a, b)) {
      case BoundKind::Free:
        x(i) = u(i);
        break;
      case BoundKind::Lower:
        x(i) = a + std::exp(u(i));
        break;
      case BoundKind::Upper:
        x(i) = b - std::exp(u(i));
        break;
      case BoundKind::Both: {
        // Numerically stable logistic.
        const double s = u(i) >= 0.0 ? 1.0 / (1.0 + std::exp(-u(i)))
                                     : std::exp(u(i)) / (1.0 + std::exp(u(i)));
        x(i) = a + (b - a) * s;
        break;
      }
    }
  }
  return x;
}

arma::vec BoundTransform::dx_du(const arma::vec& u) const {
  if (u.n_elem != lower.n_elem) {
    throw std::invalid_argument("BoundTransform: point has wrong length");
  }
  arma::vec d(u.n_elem);
  for (arma::uword i = 0; i < u.n_elem; ++i) {
    const double a = lower(i), b = upper(i);
    switch (bound_kind(a, b)) {
      case BoundKind::Free:
        d(i) = 1.0;
        break;
      case BoundKind::Lower:
        d(i) = std::exp(u(i));
        break;
      case BoundKind::Upper:
        d(i) = -std::exp(u(i));
        break;
      case BoundKind::Both: {
        const double s = u(i) >= 0.0 ? 1.0 / (1.0 + std::exp(-u(i)))
                                     : std::exp(u(i)) / (1.0 + std::exp(u(i)));
        d(i) = (b - a) * s * (1.0 - s);
        break;
      }
    }
  }
  return d;
}

}  // namespace magi
