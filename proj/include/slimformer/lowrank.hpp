#ifndef SLIMFORMER_LOWRANK_HPP
#define SLIMFORMER_LOWRANK_HPP

#include "slimformer/graph.hpp"
#include "slimformer/tensor.hpp"

namespace slimformer {

// Dense map decomposed into two factors with rank gates between them:
// forward(x) = ((x . (A (.) z)) . B^T) + bias. Singular values are folded
// into A only, so gate folding at surgery time touches a single factor.
template <typename T>
struct FactorizedLinear {
  Tensor<T> a;     // in_dim x rank
  Tensor<T> b;     // out_dim x rank
  Tensor<T> bias;  // length out_dim; empty when absent
  int64_t in_dim = 0;
  int64_t out_dim = 0;
  int64_t rank = 0;

  bool has_bias() const { return bias.size() > 0; }
  // Weight parameters, excluding the bias.
  int64_t weight_param_count() const { return rank * (in_dim + out_dim); }
};

// Rank for matching factorized and dense parameter budgets, floor(mn/(m+n)),
// at least 1.
int64_t init_rank(int64_t m, int64_t n);

// Truncated SVD warm start: A = U_r Sigma_r, B = V_r. The reconstruction
// error of A B^T equals the optimal Frobenius rank-r error.
template <typename T>
FactorizedLinear<T> factorize(const Tensor<T>& w, int64_t r, Tensor<T> bias = {});

// x: [t x in_dim] -> [t x out_dim]; z (length rank) is optional gating.
template <typename T>
Val factorized_forward(Graph<T>& g, FactorizedLinear<T>& layer, Val x, Val z = Val{});

// Drops ranks whose deterministic gate is 0 and folds the surviving gate
// values into A's columns; the result computes exactly what the masked layer
// computed. r' = 0 degenerates to a bias-only map.
template <typename T>
FactorizedLinear<T> prune_ranks(const FactorizedLinear<T>& layer, const Tensor<T>& z_eval);

// Plain (non-graph) forward, used by surgery equivalence checks.
template <typename T>
Tensor<T> factorized_apply(const FactorizedLinear<T>& layer, const Tensor<T>& x,
                           const Tensor<T>* z = nullptr);

}  // namespace slimformer

#endif  // SLIMFORMER_LOWRANK_HPP
