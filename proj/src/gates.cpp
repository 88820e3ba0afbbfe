#include "slimformer/gates.hpp"

#include <cmath>

namespace slimformer {

const char* group_kind_name(GroupKind k) {
  switch (k) {
    case GroupKind::kAttentionHead: return "attention_head";
    case GroupKind::kFfnHiddenUnit: return "ffn_hidden_unit";
    case GroupKind::kConvPointwiseChannel: return "conv_pointwise_channel";
    case GroupKind::kLrfRank: return "lrf_rank";
  }
  return "?";
}

std::vector<PruneGroup> GateLayout::groups() const {
  std::vector<PruneGroup> out;
  out.reserve(static_cast<size_t>(total));
  for (const GateSite& s : sites) {
    for (int64_t i = 0; i < s.count; ++i) {
      PruneGroup gp;
      gp.id = s.offset + i;
      gp.kind = s.kind;
      gp.owner = s.path;
      gp.param_count = s.params_per_group;
      out.push_back(std::move(gp));
    }
  }
  return out;
}

std::vector<int64_t> GateLayout::param_counts() const {
  std::vector<int64_t> out(static_cast<size_t>(total), 0);
  for (const GateSite& s : sites) {
    for (int64_t i = 0; i < s.count; ++i) out[static_cast<size_t>(s.offset + i)] = s.params_per_group;
  }
  return out;
}

int64_t GateLayout::total_prunable_params() const {
  int64_t acc = 0;
  for (const GateSite& s : sites) acc += s.count * s.params_per_group;
  return acc;
}

template <typename T>
Val hard_concrete_chain(Graph<T>& g, Val log_alpha, Val u, T beta, T lo, T hi) {
  Val one = g.constant_scalar(T(1));
  Val one_minus_u = g.add(g.scale(u, T(-1)), one);
  Val logit_u = g.sub(g.log(u), g.log(one_minus_u));
  Val s = g.sigmoid(g.scale(g.add(logit_u, log_alpha), T(1) / beta));
  Val stretched = g.add(g.scale(s, hi - lo), g.constant_scalar(lo));
  return g.clamp(stretched, T(0), T(1));
}

template <typename T>
Val sample_gates(Graph<T>& g, GateSet<T>& gates) {
  SF_CHECK_CONTRACT(gates.mode == GateSet<T>::Mode::kTrain,
                    "sample_gates requires train mode; use eval_gates otherwise");
  Val u = g.uniform({gates.size()});
  Val la = g.leaf(&gates.log_alpha);
  return hard_concrete_chain(g, la, u, gates.beta, gates.stretch_lo, gates.stretch_hi);
}

template <typename T>
Tensor<T> eval_gates(const GateSet<T>& gates) {
  Tensor<T> out({gates.size()});
  const T range = gates.stretch_hi - gates.stretch_lo;
  for (int64_t i = 0; i < gates.size(); ++i) {
    const double la = static_cast<double>(gates.log_alpha.at(i));
    double v = 1.0 / (1.0 + std::exp(-la));
    v = v * static_cast<double>(range) + static_cast<double>(gates.stretch_lo);
    out.at(i) = static_cast<T>(std::min(1.0, std::max(0.0, v)));
  }
  return out;
}

template <typename T>
Val prob_nonzero(Graph<T>& g, GateSet<T>& gates) {
  Val la = g.leaf(&gates.log_alpha);
  const T shift = -gates.beta * std::log(-gates.stretch_lo / gates.stretch_hi);
  return g.sigmoid(g.add(la, g.constant_scalar(shift)));
}

template <typename T>
Tensor<T> prob_nonzero_values(const GateSet<T>& gates) {
  Tensor<T> out({gates.size()});
  const double shift =
      -static_cast<double>(gates.beta) *
      std::log(-static_cast<double>(gates.stretch_lo) / static_cast<double>(gates.stretch_hi));
  for (int64_t i = 0; i < gates.size(); ++i) {
    const double x = static_cast<double>(gates.log_alpha.at(i)) + shift;
    out.at(i) = static_cast<T>(1.0 / (1.0 + std::exp(-x)));
  }
  return out;
}

template <typename T>
Val current_sparsity(Graph<T>& g, Val p, const std::vector<int64_t>& param_counts) {
  SF_CHECK_CONTRACT(!param_counts.empty(), "current_sparsity: no prune groups registered");
  SF_CHECK_CONTRACT(g.value(p).size() == static_cast<int64_t>(param_counts.size()),
                    "current_sparsity: ", g.value(p).size(), " probabilities vs ",
                    param_counts.size(), " groups");
  int64_t total = 0;
  for (int64_t c : param_counts) {
    SF_CHECK_CONTRACT(c > 0, "group param_count must be positive");
    total += c;
  }
  Tensor<T> w({static_cast<int64_t>(param_counts.size())});
  for (size_t i = 0; i < param_counts.size(); ++i) {
    w.at(static_cast<int64_t>(i)) = static_cast<T>(static_cast<double>(param_counts[i]) /
                                                   static_cast<double>(total));
  }
  Val retained = g.sum(g.mul(p, g.constant(std::move(w))));
  return g.sub(g.constant_scalar(T(1)), retained);
}

template <typename T>
Val lagrangian_penalty(Graph<T>& g, LagrangianState<T>& state, Val sparsity, double t_scheduled) {
  Val l1 = g.leaf(&state.lambda1);
  Val l2 = g.leaf(&state.lambda2);
  Val diff = g.sub(sparsity, g.constant_scalar(static_cast<T>(t_scheduled)));
  return g.add(g.mul(l1, diff), g.mul(l2, g.mul(diff, diff)));
}

#define SF_INSTANTIATE_GATES(T)                                                        \
  template Val hard_concrete_chain<T>(Graph<T>&, Val, Val, T, T, T);                   \
  template Val sample_gates<T>(Graph<T>&, GateSet<T>&);                                \
  template Tensor<T> eval_gates<T>(const GateSet<T>&);                                 \
  template Val prob_nonzero<T>(Graph<T>&, GateSet<T>&);                                \
  template Tensor<T> prob_nonzero_values<T>(const GateSet<T>&);                        \
  template Val current_sparsity<T>(Graph<T>&, Val, const std::vector<int64_t>&);       \
  template Val lagrangian_penalty<T>(Graph<T>&, LagrangianState<T>&, Val, double)

SF_INSTANTIATE_GATES(float);
SF_INSTANTIATE_GATES(double);
#undef SF_INSTANTIATE_GATES

}  // namespace slimformer
