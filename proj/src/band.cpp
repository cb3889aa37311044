#include "magi/band.hpp"

#include <algorithm>
#include <stdexcept>

namespace magi {

BandMatrix BandMatrix::from_dense(const arma::mat& a, arma::uword band) {
  if (a.n_rows != a.n_cols) {
    throw std::invalid_argument("BandMatrix::from_dense: matrix must be square");
  }
  BandMatrix out;
  out.n = a.n_rows;
  out.band = (out.n == 0) ? 0 : std::min<arma::uword>(band, out.n - 1);
  out.data.zeros(2 * out.band + 1, out.n);
  const arma::sword b = static_cast<arma::sword>(out.band);
  const arma::sword n = static_cast<arma::sword>(out.n);
  for (arma::sword j = 0; j < n; ++j) {
    const arma::sword lo = std::max<arma::sword>(0, j - b);
    const arma::sword hi = std::min<arma::sword>(n - 1, j + b);
    for (arma::sword i = lo; i <= hi; ++i) {
      out.data(static_cast<arma::uword>(b + i - j), static_cast<arma::uword>(j)) =
          a(static_cast<arma::uword>(i), static_cast<arma::uword>(j));
    }
  }
  return out;
}

arma::mat BandMatrix::to_dense() const {
  arma::mat a(n, n, arma::fill::zeros);
  const arma::sword b = static_cast<arma::sword>(band);
  const arma::sword nn = static_cast<arma::sword>(n);
  for (arma::sword j = 0; j < nn; ++j) {
    const arma::sword lo = std::max<arma::sword>(0, j - b);
    const arma::sword hi = std::min<arma::sword>(nn - 1, j + b);
    for (arma::sword i = lo; i <= hi; ++i) {
      a(static_cast<arma::uword>(i), static_cast<arma::uword>(j)) =
          data(static_cast<arma::uword>(b + i - j), static_cast<arma::uword>(j));
    }
  }
  return a;
}

void BandMatrix::matvec(const arma::vec& x, arma::vec& y) const {
  y.zeros(n);
  const arma::sword b = static_cast<arma::sword>(band);
  const arma::sword nn = static_cast<arma::sword>(n);
  const double* col = data.memptr();
  const arma::uword stride = data.n_rows;
  for (arma::sword j = 0; j < nn; ++j, col += stride) {
    const double xj = x(static_cast<arma::uword>(j));
    if (xj == 0.0) continue;
    const arma::sword lo = std::max<arma::sword>(0, j - b);
    const arma::sword hi = std::min<arma::sword>(nn - 1, j + b);
    for (arma::sword i = lo; i <= hi; ++i) {
      y(static_cast<arma::uword>(i)) += col[b + i - j] * xj;
    }
  }
}

arma::vec BandMatrix::matvec(const arma::vec& x) const {
  arma::vec y;
  matvec(x, y);
  return y;
}

void BandMatrix::tmatvec(const arma::vec& x, arma::vec& y) const {
  y.set_size(n);
  const arma::sword b = static_cast<arma::sword>(band);
  const arma::sword nn = static_cast<arma::sword>(n);
  const double* col = data.memptr();
  const arma::uword stride = data.n_rows;
  for (arma::sword j = 0; j < nn; ++j, col += stride) {
    const arma::sword lo = std::max<arma::sword>(0, j - b);
    const arma::sword hi = std::min<arma::sword>(nn - 1, j + b);
    double acc = 0.0;
    for (arma::sword i = lo; i <= hi; ++i) {
      acc += col[b + i - j] * x(static_cast<arma::uword>(i));
    }
    y(static_cast<arma::uword>(j)) = acc;
  }
}

arma::vec BandMatrix::tmatvec(const arma::vec& x) const {
  arma::vec y;
  tmatvec(x, y);
  return y;
}

}  // namespace magi
