#ifndef SLIMFORMER_DISTILL_HPP
#define SLIMFORMER_DISTILL_HPP

#include <utility>
#include <vector>

#include "slimformer/models.hpp"

namespace slimformer {

// Which layers get feature-matched. The stride rule keeps every stride-th
// layer plus both endpoints; the block rule keeps first, middle and last of
// each encoder block.
struct LayerRule {
  enum class Kind { kStride, kBlockEnds } kind = Kind::kBlockEnds;
  int64_t stride = 5;
  std::vector<int64_t> block_sizes;  // for kBlockEnds, e.g. {causal, noncausal}
};

// 1-indexed, sorted, always contains 1 and total_layers.
std::vector<int64_t> select_layers(int64_t total_layers, const LayerRule& rule);

template <typename T>
struct DistillSpec {
  std::vector<std::pair<int64_t, int64_t>> layer_pairs;  // (teacher, student), 1-indexed
  double weight_l1 = 0.5;
  double weight_cos = 0.5;
  // Per-pair projections on the student side, used only when feature widths
  // differ (never in the default recipe, where the student starts as a copy).
  std::vector<LinearMap<T>> projections;

  static DistillSpec identity_pairs(const std::vector<int64_t>& layers) {
    DistillSpec s;
    for (int64_t l : layers) s.layer_pairs.push_back({l, l});
    return s;
  }
};

// Mean over pairs of  w_l1 * mean|t - s|  +  w_cos * mean_t(1 - cos(t_frame, s_frame)).
// Teacher features must not require grad; the loss trains the student only.
template <typename T>
Val distill_loss(Graph<T>& g, DistillSpec<T>& spec, const std::vector<Val>& teacher_layers,
                 const std::vector<Val>& student_layers,
                 std::vector<Val>* per_pair = nullptr);

// Feature-matching on the two encoder taps, averaged.
template <typename T>
Val kd_encoder_loss(Graph<T>& g, const DistillSpec<T>& weights, Val teacher_causal,
                    Val teacher_noncausal, Val student_causal, Val student_noncausal);

}  // namespace slimformer

#endif  // SLIMFORMER_DISTILL_HPP
