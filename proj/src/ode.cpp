#include "magi/ode.hpp"

#include <cmath>
#include <stdexcept>

namespace magi {

namespace {

arma::vec eta_hiv(const arma::vec& tvec) {
  return 9e-5 * (1.0 - 0.9 * arma::cos(M_PI * tvec / 1000.0));
}

OdeSystem make_hes1() {
  OdeSystem sys;
  sys.name = "hes1";
  sys.dim_x = 3;
  sys.dim_theta = 7;
  sys.state_names = {"P", "M", "H"};
  sys.theta_names = {"a", "b", "c", "d", "e", "f", "g"};
  sys.theta_lower = arma::zeros<arma::vec>(7);
  sys.theta_upper = arma::vec(7, arma::fill::value(arma::datum::inf));
  sys.f = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec P = x.col(0), M = x.col(1), H = x.col(2);
    const arma::vec den = 1.0 + arma::square(P);
    arma::mat out(x.n_rows, 3);
    out.col(0) = -theta(0) * P % H + theta(1) * M - theta(2) * P;
    out.col(1) = -theta(3) * M + theta(4) / den;
    out.col(2) = -theta(0) * P % H + theta(5) / den - theta(6) * H;
    return out;
  };
  sys.jac_x = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec P = x.col(0), H = x.col(2);
    const arma::vec den = 1.0 + arma::square(P);
    const arma::vec dinv = -2.0 * P / arma::square(den);  // d/dP [1/(1+P^2)]
    arma::cube dx(x.n_rows, 3, 3, arma::fill::zeros);
    dx.slice(0).col(0) = -theta(0) * H - theta(2);
    dx.slice(0).col(1).fill(theta(1));
    dx.slice(0).col(2) = -theta(0) * P;
    dx.slice(1).col(0) = theta(4) * dinv;
    dx.slice(1).col(1).fill(-theta(3));
    dx.slice(2).col(0) = -theta(0) * H + theta(5) * dinv;
    dx.slice(2).col(2) = -theta(0) * P - theta(6);
    return dx;
  };
  sys.jac_theta = [](const arma::vec&, const arma::mat& x, const arma::vec&) {
    const arma::vec P = x.col(0), M = x.col(1), H = x.col(2);
    const arma::vec den = 1.0 + arma::square(P);
    arma::cube dt(x.n_rows, 7, 3, arma::fill::zeros);
    dt.slice(0).col(0) = -P % H;
    dt.slice(0).col(1) = M;
    dt.slice(0).col(2) = -P;
    dt.slice(1).col(3) = -M;
    dt.slice(1).col(4) = 1.0 / den;
    dt.slice(2).col(0) = -P % H;
    dt.slice(2).col(5) = 1.0 / den;
    dt.slice(2).col(6) = -H;
    return dt;
  };
  return sys;
}

OdeSystem make_hes1_log() {
  OdeSystem sys;
  sys.name = "hes1-log";
  sys.dim_x = 3;
  sys.dim_theta = 7;
  sys.state_names = {"logP", "logM", "logH"};
  sys.theta_names = {"a", "b", "c", "d", "e", "f", "g"};
  sys.theta_lower = arma::zeros<arma::vec>(7);
  sys.theta_upper = arma::vec(7, arma::fill::value(arma::datum::inf));
  sys.f = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec P = arma::exp(x.col(0));
    const arma::vec M = arma::exp(x.col(1));
    const arma::vec H = arma::exp(x.col(2));
    const arma::vec den = 1.0 + arma::square(P);
    arma::mat out(x.n_rows, 3);
    out.col(0) = -theta(0) * H + theta(1) * M / P - theta(2);
    out.col(1) = -theta(3) + theta(4) / den / M;
    out.col(2) = -theta(0) * P + theta(5) / den / H - theta(6);
    return out;
  };
  sys.jac_x = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec logP = x.col(0), logM = x.col(1), logH = x.col(2);
    // dP = d/d(logP) [1/(1+P^2)] = -2 P^2 / (1+P^2)^2 with P = exp(logP).
    const arma::vec e2p = arma::exp(2.0 * logP);
    const arma::vec dp = -2.0 * e2p / arma::square(1.0 + e2p);
    arma::cube dx(x.n_rows, 3, 3, arma::fill::zeros);
    dx.slice(0).col(0) = -theta(1) * arma::exp(logM - logP);
    dx.slice(0).col(1) = theta(1) * arma::exp(logM - logP);
    dx.slice(0).col(2) = -theta(0) * arma::exp(logH);
    dx.slice(1).col(0) = theta(4) * arma::exp(-logM) % dp;
    dx.slice(1).col(1) = -theta(4) * arma::exp(-logM) / (1.0 + e2p);
    dx.slice(2).col(0) = -theta(0) * arma::exp(logP) + theta(5) * arma::exp(-logH) % dp;
    dx.slice(2).col(2) = -theta(5) * arma::exp(-logH) / (1.0 + e2p);
    return dx;
  };
  sys.jac_theta = [](const arma::vec&, const arma::mat& x, const arma::vec&) {
    const arma::vec logP = x.col(0), logM = x.col(1), logH = x.col(2);
    const arma::vec e2p = arma::exp(2.0 * logP);
    arma::cube dt(x.n_rows, 7, 3, arma::fill::zeros);
    dt.slice(0).col(0) = -arma::exp(logH);
    dt.slice(0).col(1) = arma::exp(logM - logP);
    dt.slice(0).col(2).fill(-1.0);
    dt.slice(1).col(3).fill(-1.0);
    dt.slice(1).col(4) = arma::exp(-logM) / (1.0 + e2p);
    dt.slice(2).col(0) = -arma::exp(logP);
    dt.slice(2).col(5) = arma::exp(-logH) / (1.0 + e2p);
    dt.slice(2).col(6).fill(-1.0);
    return dt;
  };
  return sys;
}

OdeSystem make_fn() {
  OdeSystem sys;
  sys.name = "fn";
  sys.dim_x = 2;
  sys.dim_theta = 3;
  sys.state_names = {"V", "R"};
  sys.theta_names = {"a", "b", "c"};
  sys.theta_lower = arma::zeros<arma::vec>(3);
  sys.theta_upper = arma::vec(3, arma::fill::value(arma::datum::inf));
  sys.f = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec V = x.col(0), R = x.col(1);
    arma::mat out(x.n_rows, 2);
    out.col(0) = theta(2) * (V - arma::pow(V, 3) / 3.0 + R);
    out.col(1) = -1.0 / theta(2) * (V - theta(0) + theta(1) * R);
    return out;
  };
  sys.jac_x = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec V = x.col(0);
    arma::cube dx(x.n_rows, 2, 2, arma::fill::zeros);
    dx.slice(0).col(0) = theta(2) * (1.0 - arma::square(V));
    dx.slice(0).col(1).fill(theta(2));
    dx.slice(1).col(0).fill(-1.0 / theta(2));
    dx.slice(1).col(1).fill(-theta(1) / theta(2));
    return dx;
  };
  sys.jac_theta = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec V = x.col(0), R = x.col(1);
    arma::cube dt(x.n_rows, 3, 2, arma::fill::zeros);
    dt.slice(0).col(2) = V - arma::pow(V, 3) / 3.0 + R;
    dt.slice(1).col(0).fill(1.0 / theta(2));
    dt.slice(1).col(1) = -R / theta(2);
    dt.slice(1).col(2) = (V - theta(0) + theta(1) * R) / (theta(2) * theta(2));
    return dt;
  };
  return sys;
}

OdeSystem make_hiv_td() {
  OdeSystem sys;
  sys.name = "hiv-td";
  sys.dim_x = 3;
  sys.dim_theta = 5;
  sys.state_names = {"TU", "TI", "V"};
  sys.theta_names = {"lambda", "rho", "delta", "N", "c"};
  sys.theta_lower = arma::zeros<arma::vec>(5);
  sys.theta_upper = arma::vec(5, arma::fill::value(arma::datum::inf));
  sys.f = [](const arma::vec& theta, const arma::mat& x, const arma::vec& tvec) {
    const arma::vec TU = x.col(0), TI = x.col(1), V = x.col(2);
    const arma::vec eta = eta_hiv(tvec);
    arma::mat out(x.n_rows, 3);
    out.col(0) = theta(0) - theta(1) * TU - eta % TU % V;
    out.col(1) = eta % TU % V - theta(2) * TI;
    out.col(2) = theta(3) * theta(2) * TI - theta(4) * V;
    return out;
  };
  sys.jac_x = [](const arma::vec& theta, const arma::mat& x, const arma::vec& tvec) {
    const arma::vec TU = x.col(0), V = x.col(2);
    const arma::vec eta = eta_hiv(tvec);
    arma::cube dx(x.n_rows, 3, 3, arma::fill::zeros);
    dx.slice(0).col(0) = -theta(1) - eta % V;
    dx.slice(0).col(2) = -eta % TU;
    dx.slice(1).col(0) = eta % V;
    dx.slice(1).col(1).fill(-theta(2));
    dx.slice(1).col(2) = eta % TU;
    dx.slice(2).col(1).fill(theta(3) * theta(2));
    dx.slice(2).col(2).fill(-theta(4));
    return dx;
  };
  sys.jac_theta = [](const arma::vec& theta, const arma::mat& x, const arma::vec&) {
    const arma::vec TU = x.col(0), TI = x.col(1), V = x.col(2);
    arma::cube dt(x.n_rows, 5, 3, arma::fill::zeros);
    dt.slice(0).col(0).fill(1.0);
    dt.slice(0).col(1) = -TU;
    dt.slice(1).col(2) = -TI;
    dt.slice(2).col(2) = theta(3) * TI;
    dt.slice(2).col(3) = theta(2) * TI;
    dt.slice(2).col(4) = -V;
    return dt;
  };
  return sys;
}

}  // namespace

std::vector<std::string> builtin_model_names() {
  return {"hes1", "hes1-log", "fn", "hiv-td"};
}

OdeSystem builtin_model(const std::string& name) {
  if (name == "hes1") return make_hes1();
  if (name == "hes1-log") return make_hes1_log();
  if (name == "fn") return make_fn();
  if (name == "hiv-td") return make_hiv_td();
  std::string choices;
  for (const std::string& c : builtin_model_names()) {
    choices += choices.empty() ? c : (", " + c);
  }
  throw std::invalid_argument("unknown model '" + name + "' (available: " + choices + ")");
}

GradCheckReport check_gradients(const OdeSystem& model, const arma::mat& x_test,
                                const arma::vec& theta_test, const arma::vec& times,
                                double tol) {
  if (tol <= 0.0) throw std::invalid_argument("check_gradients: tol must be > 0");
  if (x_test.n_cols != model.dim_x || theta_test.n_elem != model.dim_theta ||
      times.n_elem != x_test.n_rows) {
    throw std::invalid_argument("check_gradients: shape mismatch between model and inputs");
  }
  const arma::uword n = x_test.n_rows;
  const arma::uword d = model.dim_x;
  const arma::uword p = model.dim_theta;

  const arma::cube jx = model.jac_x(theta_test, x_test, times);
  const arma::cube jt = model.jac_theta(theta_test, x_test, times);
  if (jx.n_rows != n || jx.n_cols != d || jx.n_slices != d) {
    throw std::invalid_argument("check_gradients: jac_x shape mismatch");
  }
  if (jt.n_rows != n || jt.n_cols != p || jt.n_slices != d) {
    throw std::invalid_argument("check_gradients: jac_theta shape mismatch");
  }

  GradCheckReport report;
  auto step = [](double v) { return std::max(1e-6, 1e-6 * std::abs(v)); };

  for (arma::uword i = 0; i < d; ++i) {
    arma::vec h(n);
    for (arma::uword t = 0; t < n; ++t) h(t) = step(x_test(t, i));
    arma::mat xp = x_test, xm = x_test;
    xp.col(i) += h;
    xm.col(i) -= h;
    const arma::mat fp = model.f(theta_test, xp, times);
    const arma::mat fm = model.f(theta_test, xm, times);
    for (arma::uword j = 0; j < d; ++j) {
      const arma::vec fd = (fp.col(j) - fm.col(j)) / (2.0 * h);
      const double err = arma::abs(jx.slice(j).col(i) - fd).max();
      report.max_abs_err_dx = std::max(report.max_abs_err_dx, err);
    }
  }

  for (arma::uword i = 0; i < p; ++i) {
    const double h = step(theta_test(i));
    arma::vec tp = theta_test, tm = theta_test;
    tp(i) += h;
    tm(i) -= h;
    const arma::mat fp = model.f(tp, x_test, times);
    const arma::mat fm = model.f(tm, x_test, times);
    for (arma::uword j = 0; j < d; ++j) {
      const arma::vec fd = (fp.col(j) - fm.col(j)) / (2.0 * h);
      const double err = arma::abs(jt.slice(j).col(i) - fd).max();
      report.max_abs_err_dtheta = std::max(report.max_abs_err_dtheta, err);
    }
  }

  report.pass = report.max_abs_err_dx < tol && report.max_abs_err_dtheta < tol;
  return report;
}

}  // namespace magi
