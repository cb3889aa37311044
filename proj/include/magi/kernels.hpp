#pragma once

#include <armadillo>
#include <string>
#include <vector>

#include "magi/band.hpp"

namespace magi {

enum class KernelKind {
  GeneralMatern,   // Matern with nu = 2.01 (default)
  Matern52,        // Matern with nu = 5/2
  Rbf,             // squared exponential
  Compact1,        // compactly supported polynomial kernel
  PeriodicMatern,  // Matern 5/2 on warped distance |2 sin(pi r / phi3)|
};

// Canonical names: general-matern, matern-5/2, rbf, compact1, periodic-matern.
KernelKind kernel_kind_from_string(const std::string& name);
std::string to_string(KernelKind kind);

// Number of hyper-parameters: 3 for periodic-matern, else 2.
arma::uword phi_size(KernelKind kind);

struct KernelSpec {
  KernelKind kind = KernelKind::GeneralMatern;
  arma::vec phi;  // (phi1 variance scale, phi2 bandwidth[, phi3 period])

  // Throws std::invalid_argument on wrong phi length, phi1 < 0, phi2 <= 0,
  // or phi3 <= 0.
  void validate() const;
};

struct KernelDerivs {
  double k;         // K(s, t)
  double dk_ds;     // d/ds K(s, t)
  double dk_dt;     // d/dt K(s, t)
  double d2k_dsdt;  // d^2/(ds dt) K(s, t)
};

// Kernel value and first/second cross-derivatives; s = t is handled by the
// analytic limits (never by numerical differencing).
KernelDerivs kernel_derivs(const KernelSpec& spec, double s, double t);

// Dense kernel matrix K(s_i, t_j).
arma::mat kernel_matrix(const KernelSpec& spec, const arma::vec& s, const arma::vec& t);

// K(times, times) together with the per-hyper-parameter derivative matrices
// dK/dphi_p (used by the marginal-likelihood fit). Requires phi1 > 0.
void kernel_matrix_with_grads(const KernelSpec& spec, const arma::vec& times,
                              arma::mat& k, std::vector<arma::mat>& dk_dphi);

// Per-component GP quantities on a fixed grid. Cinv, Psinv, and m are the
// band-truncated inverse covariance of x(I), inverse conditional covariance
// of xdot(I), and the projection taking x(I) to the conditional mean of
// xdot(I); logdet_c / logdet_psi come from the dense factorizations.
struct GpBundle {
  arma::vec times;
  KernelSpec spec;
  arma::vec mu;
  arma::vec dotmu;
  BandMatrix cinv;
  BandMatrix psinv;
  BandMatrix m;
  double logdet_c = 0.0;
  double logdet_psi = 0.0;
};

// Builds C = K(I,I), 'K = d/ds K, K'' = d^2/(ds dt) K, then
// m = 'K C^{-1} and Psi = K'' - 'K C^{-1} K', inverting C and Psi by
// Cholesky with escalating diagonal jitter (1e-10*phi1 up to 1e-4*phi1).
// mu / dotmu may be empty (treated as zero). Throws std::runtime_error if
// factorization fails at the maximal jitter.
GpBundle build_gp_bundle(const arma::vec& times, const KernelSpec& spec,
                         const arma::vec& mu, const arma::vec& dotmu,
                         arma::uword band_size);

// Dense variants used by the bundle and by tests/diagnostics.
struct GpDense {
  arma::mat c;      // K(I, I)
  arma::mat kprime; // 'K = d/ds K(I, I)
  arma::mat kdd;    // K'' = d^2/(ds dt) K(I, I)
};
GpDense gp_dense_matrices(const KernelSpec& spec, const arma::vec& times);

}  // namespace magi
