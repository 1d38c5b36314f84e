#ifndef SMALR_PCA_HPP_
#define SMALR_PCA_HPP_

#include <string>
#include <vector>

#include "smalr/corpus.hpp"
#include "smalr/tensor.hpp"

namespace smalr {

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Tensor vectors;              // column k pairs with values[k]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen jacobi_eigen(const Tensor& symmetric, double tolerance = 1e-15,
                            std::size_t max_sweeps = 100);

struct PcaResult {
  Tensor mean;        // 1 x D
  Tensor components;  // d x D, one unit component per row
  std::vector<double> eigenvalues;
  /// eigenvalue / total variance, per kept component.
  std::vector<double> explained_ratio;
  Tensor projected;  // n x d
  std::vector<std::string> warnings;

  Tensor project(const Tensor& rows) const;
};

/// Projects the rows of `data` onto the top-d principal components of the
/// mean-centred covariance. Each component's largest-magnitude entry is
/// positive. Components beyond the numerical rank are zero (with a warning).
PcaResult pca_reduce(const Tensor& data, std::size_t d);

/// One basis fitted on the rows of every language, then applied per language.
WordVectors reduce_word_vectors(const WordVectors& vectors, std::size_t d,
                                std::vector<std::string>* warnings = nullptr);

}  // namespace smalr

#endif  // SMALR_PCA_HPP_
