#include "magi/bessel.hpp"

#include <cmath>
#include <stdexcept>

// K_nu is computed as K_mu, K_{mu+1} at the fractional order mu = nu - round(nu)
// (so |mu| <= 1/2), followed by the upward three-term recurrence
//     K_{w+1}(z) = K_{w-1}(z) + (2w/z) K_w(z),
// which is stable for K (the recessive solution of the recurrence is I, not K,
// so relative error does not grow). The order pair itself comes from one of
// three argument regimes:
//   z <= 2   : Temme's series,
//   2 < z <17: Steed's continued fraction CF2 (Thompson-Barnett form),
//   z >= 17  : the large-argument asymptotic expansion, whose optimal
//              truncation error ~e^{-2z} only drops below 1e-15 past z ~ 17.
// Internals run in long double so the double result keeps full precision.

namespace magi {

namespace {

constexpr long double kPi = 3.14159265358979323846264338327950288L;

// Temme series for z <= 2, |mu| <= 1/2.
void besselk_pair_temme(long double mu, long double z, long double& kmu,
                        long double& kmu1) {
  const long double pimu = kPi * mu;
  const long double fact = (fabsl(pimu) < 1e-30L) ? 1.0L : pimu / sinl(pimu);
  const long double d = -logl(0.5L * z);
  const long double e = mu * d;
  const long double fact2 = (fabsl(e) < 1e-30L) ? 1.0L : sinhl(e) / e;
  const long double invgam_m = expl(-lgammal(1.0L - mu));  // 1/Gamma(1-mu)
  const long double invgam_p = expl(-lgammal(1.0L + mu));  // 1/Gamma(1+mu)
  // gam1 -> -EulerGamma as mu -> 0; smallest |mu| used in practice is 0.01,
  // where the direct quotient still holds ~17 long-double digits.
  const long double gam1 =
      (fabsl(mu) < 1e-12L) ? -0.57721566490153286060651209008240243L
                           : (invgam_m - invgam_p) / (2.0L * mu);
  const long double gam2 = 0.5L * (invgam_m + invgam_p);

  long double ff = fact * (gam1 * coshl(e) + gam2 * fact2 * d);
  long double sum = ff;
  const long double ee = expl(e);
  long double p = 0.5L * ee / invgam_p;   // (1/2)(z/2)^{-mu} Gamma(1+mu)
  long double q = 0.5L / (ee * invgam_m); // (1/2)(z/2)^{+mu} Gamma(1-mu)
  long double c = 1.0L;
  const long double z2_4 = 0.25L * z * z;
  long double sum1 = p;
  for (int i = 1; i <= 1000; ++i) {
    ff = (i * ff + p + q) / (static_cast<long double>(i) * i - mu * mu);
    c *= z2_4 / i;
    p /= (i - mu);
    q /= (i + mu);
    sum += c * ff;
    sum1 += c * (p - i * ff);
    if (fabsl(c * ff) < fabsl(sum) * 1e-21L) break;
  }
  kmu = sum;
  kmu1 = sum1 * 2.0L / z;
}

// Steed CF2 for z >= 2, |mu| <= 1/2.
void besselk_pair_cf2(long double mu, long double z, long double& kmu,
                      long double& kmu1) {
  long double b = 2.0L * (1.0L + z);
  long double d = 1.0L / b;
  long double h = d, delh = d;
  long double q1 = 0.0L, q2 = 1.0L;
  const long double a1 = 0.25L - mu * mu;
  long double q = a1, c = a1, a = -a1;
  long double s = 1.0L + q * delh;
  bool converged = false;
  for (int i = 2; i <= 10000; ++i) {
    a -= 2 * (i - 1);
    c = -a * c / i;
    const long double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0L;
    d = 1.0L / (b + a * d);
    delh = (b * d - 1.0L) * delh;
    h += delh;
    const long double dels = q * delh;
    s += dels;
    if (fabsl(dels) <= fabsl(s) * 1e-21L) {
      converged = true;
      break;
    }
  }
  if (!converged) throw std::runtime_error("besselk: CF2 failed to converge");
  h = a1 * h;
  kmu = sqrtl(kPi / (2.0L * z)) * expl(-z) / s;
  kmu1 = kmu * (mu + z + 0.5L - h) / z;
}

// Large-argument expansion K_w(z) ~ sqrt(pi/2z) e^{-z} sum_k a_k(w)/z^k,
// truncated at the smallest term. Requires z >= 17 for 1e-15 accuracy.
long double besselk_asymptotic_order(long double w, long double z) {
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k <= 200; ++k) {
    const long double next =
        term * (4.0L * w * w - (2 * k - 1) * (2 * k - 1)) / (8.0L * k * z);
    if (fabsl(next) >= fabsl(term)) break;  // past optimal truncation
    term = next;
    sum += term;
    if (fabsl(term) < 1e-21L * fabsl(sum)) break;
  }
  return sqrtl(kPi / (2.0L * z)) * expl(-z) * sum;
}

void besselk_pair(long double mu, long double z, long double& kmu,
                  long double& kmu1) {
  if (z <= 2.0L) {
    besselk_pair_temme(mu, z, kmu, kmu1);
  } else if (z < 17.0L) {
    besselk_pair_cf2(mu, z, kmu, kmu1);
  } else {
    kmu = besselk_asymptotic_order(mu, z);
    kmu1 = besselk_asymptotic_order(mu + 1.0L, z);
  }
}

// Recur the pair upward n steps; on return lo/hi hold K_{mu+n-1}, K_{mu+n}.
void recur_up(long double mu, long double z, int n, long double& lo,
              long double& hi) {
  for (int j = 0; j < n; ++j) {
    const long double next = lo + 2.0L * (mu + j + 1.0L) / z * hi;
    lo = hi;
    hi = next;
  }
}

}  // namespace

double besselk(double nu, double z) {
  if (!(z > 0.0)) throw std::invalid_argument("besselk: argument must be > 0");
  const long double anu = fabsl(static_cast<long double>(nu));
  const int n = static_cast<int>(floorl(anu + 0.5L));
  const long double mu = anu - n;
  long double lo, hi;  // K_mu, K_{mu+1}
  besselk_pair(mu, static_cast<long double>(z), lo, hi);
  if (n == 0) return static_cast<double>(lo);
  recur_up(mu, static_cast<long double>(z), n - 1, lo, hi);
  return static_cast<double>(hi);  // K_{mu+n} = K_nu
}

std::array<double, 3> besselk_three(double nu, double z) {
  if (!(z > 0.0)) throw std::invalid_argument("besselk: argument must be > 0");
  const long double anu = fabsl(static_cast<long double>(nu));
  const int n = static_cast<int>(floorl(anu + 0.5L));
  if (n < 2)  // orders below nu-2 wrap through zero; take them one by one
    return {besselk(nu, z), besselk(nu - 1.0, z), besselk(nu - 2.0, z)};
  const long double mu = anu - n;
  long double lo, hi;
  besselk_pair(mu, static_cast<long double>(z), lo, hi);
  recur_up(mu, static_cast<long double>(z), n - 2, lo, hi);
  // lo = K_{nu-2}, hi = K_{nu-1}; one more recurrence step gives K_nu.
  const long double top = lo + 2.0L * (anu - 1.0L) / z * hi;
  return {static_cast<double>(top), static_cast<double>(hi),
          static_cast<double>(lo)};
}

}  // namespace magi
