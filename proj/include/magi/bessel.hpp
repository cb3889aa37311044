// Modified Bessel function of the second kind K_nu(z) for real order,
// self-contained (no special-function library dependency).
#pragma once

#include <array>

namespace magi {

// K_nu(z) for z > 0, any real nu (K is even in the order). Accurate to
// ~1e-13 relative over z in [1e-6, 100], the range exercised by the
// general Matern kernel.
double besselk(double nu, double z);

// {K_nu, K_{nu-1}, K_{nu-2}} in one pass; the trio a Matern covariance needs
// for its value and first two derivatives.
std::array<double, 3> besselk_three(double nu, double z);

}  // namespace magi
