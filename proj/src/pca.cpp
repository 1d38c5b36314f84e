#include "smalr/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace smalr {

SymmetricEigen jacobi_eigen(const Tensor& symmetric, double tolerance, std::size_t max_sweeps) {
  const std::size_t n = symmetric.rows();
  if (symmetric.cols() != n) throw ShapeError("jacobi_eigen needs a square matrix");
  Tensor a = symmetric;
  Tensor v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double scale = 0.0;
  for (double x : a.data()) scale += x * x;
  scale = std::sqrt(scale);

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tolerance * std::max(scale, 1e-300)) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymmetricEigen out;
  out.vectors = Tensor(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values.push_back(a(order[k], order[k]));
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

Tensor PcaResult::project(const Tensor& rows) const {
  if (rows.cols() != mean.cols()) throw ShapeError("pca project: dimension mismatch");
  Tensor centred = rows;
  for (std::size_t r = 0; r < rows.rows(); ++r)
    for (std::size_t c = 0; c < rows.cols(); ++c) centred(r, c) -= mean(0, c);
  return matmul(centred, transpose(components));
}

PcaResult pca_reduce(const Tensor& data, std::size_t d) {
  const std::size_t n = data.rows();
  const std::size_t dim = data.cols();
  if (d > dim) throw Error("pca: target dimension exceeds input dimension");
  if (n < 2) throw Error("pca: need at least two rows");

  PcaResult out;
  out.mean = Tensor(1, dim);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < dim; ++c) out.mean(0, c) += data(r, c);
  for (std::size_t c = 0; c < dim; ++c) out.mean(0, c) /= static_cast<double>(n);

  Tensor cov(dim, dim);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double xi = data(r, i) - out.mean(0, i);
      for (std::size_t j = i; j < dim; ++j) cov(i, j) += xi * (data(r, j) - out.mean(0, j));
    }
  }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i; j < dim; ++j) {
      cov(i, j) /= static_cast<double>(n - 1);
      cov(j, i) = cov(i, j);
    }

  const SymmetricEigen eig = jacobi_eigen(cov);
  double total = 0.0;
  for (std::size_t i = 0; i < dim; ++i) total += cov(i, i);
  const double rank_tol = 1e-12 * std::max(eig.values.empty() ? 0.0 : eig.values[0], 1e-300);

  out.components = Tensor(d, dim);
  for (std::size_t k = 0; k < d; ++k) {
    const double lambda = eig.values[k];
    if (lambda <= rank_tol) {
      out.warnings.push_back("pca: component " + std::to_string(k) +
                             " is beyond the numerical rank; padded with zeros");
      out.eigenvalues.push_back(0.0);
      out.explained_ratio.push_back(0.0);
      continue;
    }
    std::size_t arg = 0;
    for (std::size_t i = 1; i < dim; ++i)
      if (std::abs(eig.vectors(i, k)) > std::abs(eig.vectors(arg, k))) arg = i;
    const double sign = eig.vectors(arg, k) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < dim; ++i) out.components(k, i) = sign * eig.vectors(i, k);
    out.eigenvalues.push_back(lambda);
    out.explained_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
  }
  out.projected = out.project(data);
  return out;
}

WordVectors reduce_word_vectors(const WordVectors& vectors, std::size_t d,
                                std::vector<std::string>* warnings) {
  std::size_t rows = 0;
  for (const Tensor& t : vectors.tables) rows += t.rows();
  const std::size_t dim = vectors.dim();
  Tensor all(rows, dim);
  std::size_t r = 0;
  for (const Tensor& t : vectors.tables) {
    if (t.cols() != dim) throw ShapeError("word vector tables differ in dimension");
    std::copy(t.data().begin(), t.data().end(), all.data().begin() + static_cast<long>(r * dim));
    r += t.rows();
  }
  const PcaResult pca = pca_reduce(all, d);
  if (warnings != nullptr) *warnings = pca.warnings;
  WordVectors out;
  for (const Tensor& t : vectors.tables) out.tables.push_back(pca.project(t));
  return out;
}

}  // namespace smalr
