#ifndef SLIMFORMER_SVD_HPP
#define SLIMFORMER_SVD_HPP

#include <vector>

#include "slimformer/tensor.hpp"

namespace slimformer {

// Thin SVD W = U diag(sigma) V^T with singular values sorted descending.
// u is m x n and v is n x n (for m >= n; the transposed problem is solved
// otherwise and the factors swapped).
template <typename T>
struct SvdResult {
  Tensor<T> u;
  std::vector<T> sigma;
  Tensor<T> v;
};

// One-sided Jacobi. Deterministic; plenty for the layer sizes in this
// project (the largest factorized map is model_dim x ffn width).
template <typename T>
SvdResult<T> jacobi_svd(const Tensor<T>& w, int max_sweeps = 60);

}  // namespace slimformer

#endif  // SLIMFORMER_SVD_HPP
