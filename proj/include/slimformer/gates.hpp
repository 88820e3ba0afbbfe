#ifndef SLIMFORMER_GATES_HPP
#define SLIMFORMER_GATES_HPP

#include <string>
#include <vector>

#include "slimformer/graph.hpp"

namespace slimformer {

enum class GroupKind { kAttentionHead, kFfnHiddenUnit, kConvPointwiseChannel, kLrfRank };

const char* group_kind_name(GroupKind k);

// Smallest jointly removable parameter set: an attention head, one FFN hidden
// unit, one conv pointwise channel, or one retained rank of a factorized map.
struct PruneGroup {
  int64_t id = 0;
  GroupKind kind = GroupKind::kFfnHiddenUnit;
  std::string owner;        // layer path, e.g. "encoder/causal/layer0/ffn1"
  int64_t param_count = 0;  // scalar weights removed if this group's gate is 0
};

// A contiguous run of groups of one kind belonging to one model site. The
// flat gate vector is the concatenation of all sites in declaration order.
struct GateSite {
  std::string path;
  GroupKind kind = GroupKind::kFfnHiddenUnit;
  int64_t offset = 0;
  int64_t count = 0;
  int64_t params_per_group = 0;
};

struct GateLayout {
  std::vector<GateSite> sites;
  int64_t total = 0;

  std::vector<PruneGroup> groups() const;
  std::vector<int64_t> param_counts() const;
  int64_t total_prunable_params() const;
};

// Per-group Hard Concrete gates: a location parameter per group plus shared
// stretch/temperature constants.
template <typename T>
struct GateSet {
  Tensor<T> log_alpha;
  T beta = T(2.0 / 3.0);
  T stretch_lo = T(-0.1);
  T stretch_hi = T(1.1);
  enum class Mode { kTrain, kEval } mode = Mode::kTrain;

  GateSet() = default;
  GateSet(int64_t n_groups, T log_alpha_init, T beta_, T lo, T hi)
      : log_alpha(Tensor<T>::full({n_groups}, log_alpha_init)),
        beta(beta_),
        stretch_lo(lo),
        stretch_hi(hi) {
    SF_CHECK_CONTRACT(lo < T(0) && hi > T(1),
                      "stretch interval must satisfy lo < 0 < 1 < hi, got lo=", lo, " hi=", hi);
    SF_CHECK_CONTRACT(beta_ > T(0), "gate temperature must be positive");
    log_alpha.requires_grad = true;
  }

  int64_t size() const { return log_alpha.size(); }
};

// The stretched-sigmoid chain from noise u and location log_alpha to a gate
// value in [0,1]; differentiable w.r.t. log_alpha wherever unclamped.
template <typename T>
Val hard_concrete_chain(Graph<T>& g, Val log_alpha, Val u, T beta, T lo, T hi);

// Training-time stochastic gates; requires mode == kTrain.
template <typename T>
Val sample_gates(Graph<T>& g, GateSet<T>& gates);

// Deterministic gates for inference and surgery: no noise, no temperature.
template <typename T>
Tensor<T> eval_gates(const GateSet<T>& gates);

// Closed-form P(z > 0) per group, on the graph (needed inside the sparsity
// objective) and as a plain tensor for reporting.
template <typename T>
Val prob_nonzero(Graph<T>& g, GateSet<T>& gates);
template <typename T>
Tensor<T> prob_nonzero_values(const GateSet<T>& gates);

// Parameter-weighted expected sparsity: 1 - sum_j p_j c_j / sum_j c_j.
template <typename T>
Val current_sparsity(Graph<T>& g, Val p, const std::vector<int64_t>& param_counts);

// Lagrangian multipliers and the sparsity-target schedule (linear warmup from
// 0 to the target, then flat; hits the target exactly at warmup end).
template <typename T>
struct LagrangianState {
  Tensor<T> lambda1 = Tensor<T>::scalar(T(0));
  Tensor<T> lambda2 = Tensor<T>::scalar(T(0));
  double target_sparsity = 0.0;
  int64_t warmup_steps = 1;

  LagrangianState() {
    lambda1.requires_grad = true;
    lambda2.requires_grad = true;
  }

  double scheduled_target(int64_t step) const {
    if (warmup_steps <= 0 || step >= warmup_steps) return target_sparsity;
    return target_sparsity * (static_cast<double>(step) / static_cast<double>(warmup_steps));
  }
};

// lambda1 * (s - t) + lambda2 * (s - t)^2 at the scheduled target.
template <typename T>
Val lagrangian_penalty(Graph<T>& g, LagrangianState<T>& state, Val sparsity, double t_scheduled);

}  // namespace slimformer

#endif  // SLIMFORMER_GATES_HPP
