#include "magi/kernels.hpp"

#include <cmath>
#include <stdexcept>

#include "magi/bessel.hpp"

namespace magi {

namespace {

constexpr double kNu = 2.01;  // smoothness of the general Matern kernel

// Value and first two radial derivatives of a stationary kernel g(r), r >= 0.
struct Core {
  double g;    // g(r)
  double gp;   // g'(r)
  double gpp;  // g''(r)
};

Core core_general_matern(double phi1, double phi2, double r) {
  const double a = std::sqrt(2.0 * kNu) / phi2;
  static const double c_nu = std::pow(2.0, 1.0 - kNu) / std::tgamma(kNu);
  if (r == 0.0) {
    return {phi1, 0.0, -phi1 * kNu / (phi2 * phi2 * (kNu - 1.0))};
  }
  const double z = a * r;
  // {K_nu, K_{nu-1}, K_{nu-2}} at z; the derivatives follow from
  // d/dz [z^nu K_nu(z)] = -z^nu K_{nu-1}(z) and the three-term recurrence.
  const auto ks = besselk_three(kNu, z);
  const double znu = std::pow(z, kNu);
  const double znum1 = znu / z;  // z^{nu-1}
  const double g = phi1 * c_nu * znu * ks[0];
  const double gp = -phi1 * c_nu * a * znu * ks[1];
  const double gpp = -phi1 * c_nu * a * a * (znum1 * ks[1] - znu * ks[2]);
  return {g, gp, gpp};
}

Core core_matern52(double phi1, double phi2, double r) {
  const double b = std::sqrt(5.0) / phi2;
  const double e = std::exp(-b * r);
  const double g = phi1 * (1.0 + b * r + b * b * r * r / 3.0) * e;
  const double gp = -phi1 * b * b * r * (1.0 + b * r) / 3.0 * e;
  const double gpp = -phi1 * b * b / 3.0 * (1.0 + b * r - b * b * r * r) * e;
  return {g, gp, gpp};
}

Core core_rbf(double phi1, double phi2, double r) {
  const double v = phi2 * phi2;
  const double e = phi1 * std::exp(-r * r / (2.0 * v));
  return {e, -e * r / v, e * (r * r / (v * v) - 1.0 / v)};
}

Core core_compact1(double phi1, double phi2, double r) {
  const double u = r / phi2;
  if (u >= 1.0) return {0.0, 0.0, 0.0};
  const double m = 1.0 - u;
  const double m2 = m * m;
  const double g = phi1 * m2 * m2 * (4.0 * u + 1.0);
  const double gp = -20.0 * phi1 * u * m2 * m / phi2;
  const double gpp = -20.0 * phi1 * m2 * (1.0 - 4.0 * u) / (phi2 * phi2);
  return {g, gp, gpp};
}

Core core_r(KernelKind kind, double phi1, double phi2, double r) {
  switch (kind) {
    case KernelKind::GeneralMatern: return core_general_matern(phi1, phi2, r);
    case KernelKind::Matern52: return core_matern52(phi1, phi2, r);
    case KernelKind::Rbf: return core_rbf(phi1, phi2, r);
    case KernelKind::Compact1: return core_compact1(phi1, phi2, r);
    case KernelKind::PeriodicMatern: break;
  }
  throw std::logic_error("core_r: periodic kernel has no plain radial core");
}

double sgn(double x) { return (x > 0.0) ? 1.0 : ((x < 0.0) ? -1.0 : 0.0); }

}  // namespace

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "general-matern") return KernelKind::GeneralMatern;
  if (name == "matern-5/2") return KernelKind::Matern52;
  if (name == "rbf") return KernelKind::Rbf;
  if (name == "compact1") return KernelKind::Compact1;
  if (name == "periodic-matern") return KernelKind::PeriodicMatern;
  throw std::invalid_argument(
      "unknown kernel kind '" + name +
      "' (expected one of: general-matern, matern-5/2, rbf, compact1, periodic-matern)");
}

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::GeneralMatern: return "general-matern";
    case KernelKind::Matern52: return "matern-5/2";
    case KernelKind::Rbf: return "rbf";
    case KernelKind::Compact1: return "compact1";
    case KernelKind::PeriodicMatern: return "periodic-matern";
  }
  throw std::logic_error("to_string: bad KernelKind");
}

arma::uword phi_size(KernelKind kind) {
  return kind == KernelKind::PeriodicMatern ? 3 : 2;
}

void KernelSpec::validate() const {
  if (phi.n_elem != phi_size(kind)) {
    throw std::invalid_argument("KernelSpec: " + to_string(kind) + " needs " +
                                std::to_string(phi_size(kind)) +
                                " hyper-parameters, got " + std::to_string(phi.n_elem));
  }
  if (!phi.is_finite()) {
    throw std::invalid_argument("KernelSpec: phi must be finite");
  }
  if (phi(0) < 0.0) {
    throw std::invalid_argument("KernelSpec: phi1 (variance scale) must be >= 0");
  }
  if (phi(1) <= 0.0) {
    throw std::invalid_argument("KernelSpec: phi2 (bandwidth) must be > 0");
  }
  if (kind == KernelKind::PeriodicMatern && phi(2) <= 0.0) {
    throw std::invalid_argument("KernelSpec: phi3 (period) must be > 0");
  }
}

KernelDerivs kernel_derivs(const KernelSpec& spec, double s, double t) {
  const double phi1 = spec.phi(0);
  const double phi2 = spec.phi(1);
  const double u = s - t;

  if (spec.kind == KernelKind::PeriodicMatern) {
    // K(s,t) = g(|w|) with w(u) = 2 sin(pi u / phi3) and g the Matern-5/2
    // radial function; chain rule in u (note du/dt = -1, w'' = -(pi/phi3)^2 w).
    const double phi3 = spec.phi(2);
    const double ang = M_PI * u / phi3;
    const double w = 2.0 * std::sin(ang);
    const double wp = 2.0 * M_PI / phi3 * std::cos(ang);
    const double wpp = -(M_PI / phi3) * (M_PI / phi3) * w;
    const Core c = core_matern52(phi1, phi2, std::abs(w));
    const double dk_du = c.gp * sgn(w) * wp;
    const double d2k = -(c.gpp * wp * wp + c.gp * sgn(w) * wpp);
    return {c.g, dk_du, -dk_du, d2k};
  }

  const double r = std::abs(u);
  const Core c = core_r(spec.kind, phi1, phi2, r);
  const double dk_ds = c.gp * sgn(u);
  return {c.g, dk_ds, -dk_ds, -c.gpp};
}

arma::mat kernel_matrix(const KernelSpec& spec, const arma::vec& s, const arma::vec& t) {
  arma::mat k(s.n_elem, t.n_elem);
  for (arma::uword j = 0; j < t.n_elem; ++j) {
    for (arma::uword i = 0; i < s.n_elem; ++i) {
      k(i, j) = kernel_derivs(spec, s(i), t(j)).k;
    }
  }
  return k;
}

void kernel_matrix_with_grads(const KernelSpec& spec, const arma::vec& times,
                              arma::mat& k, std::vector<arma::mat>& dk_dphi) {
  spec.validate();
  const double phi1 = spec.phi(0);
  const double phi2 = spec.phi(1);
  if (phi1 <= 0.0) {
    throw std::invalid_argument("kernel_matrix_with_grads: phi1 must be > 0");
  }
  const arma::uword n = times.n_elem;
  const arma::uword np = phi_size(spec.kind);
  k.set_size(n, n);
  dk_dphi.assign(np, arma::mat(n, n));
  const bool periodic = spec.kind == KernelKind::PeriodicMatern;
  const double phi3 = periodic ? spec.phi(2) : 0.0;
  for (arma::uword j = 0; j < n; ++j) {
    for (arma::uword i = j; i < n; ++i) {
      const double r = std::abs(times(i) - times(j));
      double kv, dk2, dk3 = 0.0;
      if (periodic) {
        const double ang = M_PI * r / phi3;
        const double w = 2.0 * std::sin(ang);
        const double rp = std::abs(w);
        const Core c = core_matern52(phi1, phi2, rp);
        kv = c.g;
        // phi2 enters only through rp/phi2; phi3 through the warp.
        dk2 = -(rp / phi2) * c.gp;
        const double drp_dphi3 = sgn(w) * 2.0 * std::cos(ang) * (-ang / phi3);
        dk3 = c.gp * drp_dphi3;
      } else {
        const Core c = core_r(spec.kind, phi1, phi2, r);
        kv = c.g;
        // All radial kinds depend on phi2 only through r/phi2.
        dk2 = -(r / phi2) * c.gp;
      }
      k(i, j) = k(j, i) = kv;
      dk_dphi[0](i, j) = dk_dphi[0](j, i) = kv / phi1;
      dk_dphi[1](i, j) = dk_dphi[1](j, i) = dk2;
      if (periodic) dk_dphi[2](i, j) = dk_dphi[2](j, i) = dk3;
    }
  }
}

GpDense gp_dense_matrices(const KernelSpec& spec, const arma::vec& times) {
  spec.validate();
  const arma::uword n = times.n_elem;
  GpDense out;
  out.c.set_size(n, n);
  out.kprime.set_size(n, n);
  out.kdd.set_size(n, n);
  for (arma::uword j = 0; j < n; ++j) {
    for (arma::uword i = j; i < n; ++i) {
      const KernelDerivs d = kernel_derivs(spec, times(i), times(j));
      out.c(i, j) = out.c(j, i) = d.k;
      // For even stationary kernels dk_ds is odd in s - t and the second
      // cross-derivative is even.
      out.kprime(i, j) = d.dk_ds;
      out.kprime(j, i) = -d.dk_ds;
      out.kdd(i, j) = out.kdd(j, i) = d.d2k_dsdt;
    }
  }
  return out;
}

namespace {

// Lower Cholesky factor with escalating diagonal jitter; returns the factor
// and reports the jitter actually used.
arma::mat chol_with_jitter(const arma::mat& a, double phi1, const char* what,
                           double* jitter_used) {
  arma::mat l;
  double jitter = 0.0;
  if (arma::chol(l, a, "lower")) {
    *jitter_used = 0.0;
    return l;
  }
  for (jitter = 1e-10 * phi1; jitter <= 1e-4 * phi1 * (1.0 + 1e-12); jitter *= 10.0) {
    arma::mat aj = a;
    aj.diag() += jitter;
    if (arma::chol(l, aj, "lower")) {
      *jitter_used = jitter;
      return l;
    }
  }
  throw std::runtime_error(std::string("build_gp_bundle: Cholesky factorization of ") +
                           what +
                           " failed even at maximal jitter; review the kernel "
                           "hyper-parameters (larger phi2, or check phi1) for this component");
}

}  // namespace

GpBundle build_gp_bundle(const arma::vec& times, const KernelSpec& spec,
                         const arma::vec& mu, const arma::vec& dotmu,
                         arma::uword band_size) {
  spec.validate();
  const arma::uword n = times.n_elem;
  if (n < 2) {
    throw std::invalid_argument("build_gp_bundle: need at least 2 time points");
  }
  for (arma::uword i = 1; i < n; ++i) {
    if (!(times(i) > times(i - 1))) {
      throw std::invalid_argument("build_gp_bundle: times must be strictly increasing");
    }
  }
  if (!mu.is_empty() && mu.n_elem != n) {
    throw std::invalid_argument("build_gp_bundle: mu length must match times");
  }
  if (!dotmu.is_empty() && dotmu.n_elem != n) {
    throw std::invalid_argument("build_gp_bundle: dotmu length must match times");
  }

  const GpDense dm = gp_dense_matrices(spec, times);
  const double phi1 = spec.phi(0);

  double jit_c = 0.0;
  const arma::mat lc = chol_with_jitter(dm.c, phi1, "C", &jit_c);
  const double logdet_c = 2.0 * arma::sum(arma::log(lc.diag()));
  const arma::mat lc_inv = arma::inv(arma::trimatl(lc));
  const arma::mat cinv = lc_inv.t() * lc_inv;

  const arma::mat m = dm.kprime * cinv;
  arma::mat psi = dm.kdd - m * dm.kprime.t();
  psi = 0.5 * (psi + psi.t());

  double jit_psi = 0.0;
  const arma::mat lpsi = chol_with_jitter(psi, phi1, "Psi", &jit_psi);
  const double logdet_psi = 2.0 * arma::sum(arma::log(lpsi.diag()));
  const arma::mat lpsi_inv = arma::inv(arma::trimatl(lpsi));
  const arma::mat psinv = lpsi_inv.t() * lpsi_inv;

  GpBundle out;
  out.times = times;
  out.spec = spec;
  out.mu = mu.is_empty() ? arma::vec(n, arma::fill::zeros) : mu;
  out.dotmu = dotmu.is_empty() ? arma::vec(n, arma::fill::zeros) : dotmu;
  out.cinv = BandMatrix::from_dense(cinv, band_size);
  out.psinv = BandMatrix::from_dense(psinv, band_size);
  out.m = BandMatrix::from_dense(m, band_size);
  out.logdet_c = logdet_c;
  out.logdet_psi = logdet_psi;
  return out;
}

}  // namespace magi
