#pragma once

#include <armadillo>

namespace magi {

// Square band matrix of order n with half-bandwidth `band`, stored
// LAPACK-style: `data` is (2*band+1) x n with
//
//   data(band + i - j, j) = A(i, j)   for |i - j| <= band,
//
// so each column of `data` holds one column of A (contiguous in memory).
// Entries outside the band are implicitly zero.
struct BandMatrix {
  arma::mat data;
  arma::uword n = 0;
  arma::uword band = 0;

  // Truncates a square dense matrix to half-bandwidth `band`
  // (clamped to n-1; a clamped band keeps the matrix exact).
  static BandMatrix from_dense(const arma::mat& a, arma::uword band);

  arma::mat to_dense() const;

  // y = A x
  void matvec(const arma::vec& x, arma::vec& y) const;
  arma::vec matvec(const arma::vec& x) const;

  // y = A' x
  void tmatvec(const arma::vec& x, arma::vec& y) const;
  arma::vec tmatvec(const arma::vec& x) const;
};

}  // namespace magi
