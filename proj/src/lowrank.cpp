#include "slimformer/lowrank.hpp"

#include "slimformer/kernels.hpp"
#include "slimformer/svd.hpp"

namespace slimformer {

int64_t init_rank(int64_t m, int64_t n) {
  SF_CHECK_CONTRACT(m >= 1 && n >= 1, "init_rank needs positive dimensions, got ", m, "x", n);
  return std::max<int64_t>(1, (m * n) / (m + n));
}

template <typename T>
FactorizedLinear<T> factorize(const Tensor<T>& w, int64_t r, Tensor<T> bias) {
  SF_CHECK_SHAPE(w.rank() == 2, "factorize expects a matrix, got ", shape_str(w.shape));
  const int64_t m = w.dim(0), n = w.dim(1);
  SF_CHECK_CONTRACT(r >= 1 && r <= std::min(m, n), "rank ", r, " invalid for ", m, "x", n);

  SvdResult<T> svd = jacobi_svd(w);
  FactorizedLinear<T> out;
  out.in_dim = m;
  out.out_dim = n;
  out.rank = r;
  out.a = Tensor<T>({m, r});
  out.b = Tensor<T>({n, r});
  for (int64_t k = 0; k < r; ++k) {
    const T s = svd.sigma[static_cast<size_t>(k)];
    for (int64_t i = 0; i < m; ++i) out.a.at(i, k) = svd.u.at(i, k) * s;
    for (int64_t j = 0; j < n; ++j) out.b.at(j, k) = svd.v.at(j, k);
  }
  if (bias.size() > 0) {
    SF_CHECK_SHAPE(bias.size() == n, "factorize: bias length ", bias.size(), " vs out dim ", n);
    out.bias = std::move(bias);
  }
  out.a.requires_grad = true;
  out.b.requires_grad = true;
  out.bias.requires_grad = out.has_bias();
  return out;
}

template <typename T>
Val factorized_forward(Graph<T>& g, FactorizedLinear<T>& layer, Val x, Val z) {
  const int64_t t = g.value(x).dim(0);
  if (layer.rank == 0) {
    Val out = g.zeros({t, layer.out_dim});
    if (layer.has_bias()) out = g.add(out, g.leaf(&layer.bias));
    return out;
  }
  Val h = g.matmul(x, g.leaf(&layer.a));
  if (z.valid()) h = g.mul(h, z);
  Val out = g.matmul_nt(h, g.leaf(&layer.b));
  if (layer.has_bias()) out = g.add(out, g.leaf(&layer.bias));
  return out;
}

template <typename T>
FactorizedLinear<T> prune_ranks(const FactorizedLinear<T>& layer, const Tensor<T>& z_eval) {
  SF_CHECK_CONTRACT(z_eval.size() == layer.rank, "prune_ranks: ", z_eval.size(),
                    " gate values for rank ", layer.rank);
  std::vector<int64_t> keep;
  for (int64_t k = 0; k < layer.rank; ++k) {
    if (z_eval.at(k) > T(0)) keep.push_back(k);
  }
  FactorizedLinear<T> out;
  out.in_dim = layer.in_dim;
  out.out_dim = layer.out_dim;
  out.rank = static_cast<int64_t>(keep.size());
  out.bias = layer.bias;
  out.a = Tensor<T>({layer.in_dim, out.rank});
  out.b = Tensor<T>({layer.out_dim, out.rank});
  for (size_t kk = 0; kk < keep.size(); ++kk) {
    const int64_t src = keep[kk];
    const T zv = z_eval.at(src);
    for (int64_t i = 0; i < layer.in_dim; ++i) {
      out.a.at(i, static_cast<int64_t>(kk)) = layer.a.at(i, src) * zv;
    }
    for (int64_t j = 0; j < layer.out_dim; ++j) {
      out.b.at(j, static_cast<int64_t>(kk)) = layer.b.at(j, src);
    }
  }
  out.a.requires_grad = layer.a.requires_grad;
  out.b.requires_grad = layer.b.requires_grad;
  out.bias.requires_grad = layer.bias.requires_grad;
  return out;
}

template <typename T>
Tensor<T> factorized_apply(const FactorizedLinear<T>& layer, const Tensor<T>& x,
                           const Tensor<T>* z) {
  SF_CHECK_SHAPE(x.rank() == 2 && x.dim(1) == layer.in_dim, "factorized_apply: x ",
                 shape_str(x.shape), " vs in_dim ", layer.in_dim);
  const int64_t t = x.dim(0);
  Tensor<T> out({t, layer.out_dim});
  if (layer.rank > 0) {
    Tensor<T> h({t, layer.rank});
    kernels::matmul(x.data.data(), layer.a.data.data(), h.data.data(), t, layer.in_dim,
                    layer.rank);
    if (z != nullptr) {
      for (int64_t i = 0; i < t; ++i) {
        for (int64_t k = 0; k < layer.rank; ++k) h.at(i, k) *= z->at(k);
      }
    }
    Tensor<T> bt = transpose2d(layer.b);
    kernels::matmul(h.data.data(), bt.data.data(), out.data.data(), t, layer.rank, layer.out_dim);
  }
  if (layer.has_bias()) {
    for (int64_t i = 0; i < t; ++i) {
      for (int64_t j = 0; j < layer.out_dim; ++j) out.at(i, j) += layer.bias.at(j);
    }
  }
  return out;
}

#define SF_INSTANTIATE_LOWRANK(T)                                                      \
  template FactorizedLinear<T> factorize<T>(const Tensor<T>&, int64_t, Tensor<T>);     \
  template Val factorized_forward<T>(Graph<T>&, FactorizedLinear<T>&, Val, Val);       \
  template FactorizedLinear<T> prune_ranks<T>(const FactorizedLinear<T>&, const Tensor<T>&); \
  template Tensor<T> factorized_apply<T>(const FactorizedLinear<T>&, const Tensor<T>&, \
                                         const Tensor<T>*)

SF_INSTANTIATE_LOWRANK(float);
SF_INSTANTIATE_LOWRANK(double);
#undef SF_INSTANTIATE_LOWRANK

}  // namespace slimformer
