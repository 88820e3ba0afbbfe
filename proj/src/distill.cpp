#include "slimformer/distill.hpp"

#include <algorithm>
#include <set>

namespace slimformer {

std::vector<int64_t> select_layers(int64_t total_layers, const LayerRule& rule) {
  SF_CHECK_CONTRACT(total_layers >= 2, "layer selection needs at least 2 layers");
  std::set<int64_t> picked = {1, total_layers};
  if (rule.kind == LayerRule::Kind::kStride) {
    SF_CHECK_CONTRACT(rule.stride >= 1, "layer stride must be positive");
    for (int64_t l = rule.stride; l <= total_layers; l += rule.stride) picked.insert(l);
  } else {
    int64_t lo = 1;
    for (int64_t size : rule.block_sizes) {
      SF_CHECK_CONTRACT(size >= 1, "empty block in layer rule");
      const int64_t hi = lo + size - 1;
      SF_CHECK_CONTRACT(hi <= total_layers, "layer rule blocks exceed total layers");
      picked.insert(lo);
      picked.insert((lo + hi) / 2);
      picked.insert(hi);
      lo = hi + 1;
    }
  }
  return std::vector<int64_t>(picked.begin(), picked.end());
}

namespace {

// w_l1 * mean|t - s| + w_cos * mean over frames of (1 - cosine per frame).
template <typename T>
Val pair_loss(Graph<T>& g, Val teacher, Val student, double w_l1, double w_cos) {
  const Shape& ts = g.shape(teacher);
  const Shape& ss = g.shape(student);
  SF_CHECK_CONTRACT(ts.size() == 2 && ss.size() == 2 && ts[0] == ss[0],
                    "feature time-length mismatch: teacher ", shape_str(ts), " vs student ",
                    shape_str(ss));
  SF_CHECK_SHAPE(ts[1] == ss[1], "feature width mismatch without projection: ", shape_str(ts),
                 " vs ", shape_str(ss));
  Val l1 = g.l1_mean(teacher, student);
  Val cos_per_frame = g.cosine(teacher, student, 1);
  Val cos_term = g.mean(g.add(g.scale(cos_per_frame, T(-1)), g.constant_scalar(T(1))));
  return g.add(g.scale(l1, static_cast<T>(w_l1)), g.scale(cos_term, static_cast<T>(w_cos)));
}

}  // namespace

template <typename T>
Val distill_loss(Graph<T>& g, DistillSpec<T>& spec, const std::vector<Val>& teacher_layers,
                 const std::vector<Val>& student_layers, std::vector<Val>* per_pair) {
  SF_CHECK_CONTRACT(!spec.layer_pairs.empty(), "distill spec has no layer pairs");
  SF_CHECK_CONTRACT(spec.weight_l1 >= 0 && spec.weight_cos >= 0, "distill weights must be >= 0");
  SF_CHECK_CONTRACT(spec.projections.empty() ||
                        spec.projections.size() == spec.layer_pairs.size(),
                    "projections must be absent or one per pair");
  Val total{};
  for (size_t pi = 0; pi < spec.layer_pairs.size(); ++pi) {
    const auto [tl, sl] = spec.layer_pairs[pi];
    SF_CHECK_CONTRACT(tl >= 1 && tl <= static_cast<int64_t>(teacher_layers.size()),
                      "teacher layer index ", tl, " out of range");
    SF_CHECK_CONTRACT(sl >= 1 && sl <= static_cast<int64_t>(student_layers.size()),
                      "student layer index ", sl, " out of range");
    Val t = teacher_layers[static_cast<size_t>(tl - 1)];
    Val s = student_layers[static_cast<size_t>(sl - 1)];
    if (!spec.projections.empty() && spec.projections[pi].in_dim() > 0) {
      s = linear_forward(g, spec.projections[pi], s, static_cast<const GateCtx<T>*>(nullptr));
    }
    Val pl = pair_loss<T>(g, t, s, spec.weight_l1, spec.weight_cos);
    if (per_pair != nullptr) per_pair->push_back(pl);
    total = total.valid() ? g.add(total, pl) : pl;
  }
  return g.scale(total, static_cast<T>(1.0 / static_cast<double>(spec.layer_pairs.size())));
}

template <typename T>
Val kd_encoder_loss(Graph<T>& g, const DistillSpec<T>& weights, Val teacher_causal,
                    Val teacher_noncausal, Val student_causal, Val student_noncausal) {
  Val c = pair_loss<T>(g, teacher_causal, student_causal, weights.weight_l1, weights.weight_cos);
  Val nc = pair_loss<T>(g, teacher_noncausal, student_noncausal, weights.weight_l1,
                        weights.weight_cos);
  return g.scale(g.add(c, nc), T(0.5));
}

#define SF_INSTANTIATE_DISTILL(T)                                                       \
  template Val distill_loss<T>(Graph<T>&, DistillSpec<T>&, const std::vector<Val>&,     \
                               const std::vector<Val>&, std::vector<Val>*);             \
  template Val kd_encoder_loss<T>(Graph<T>&, const DistillSpec<T>&, Val, Val, Val, Val)

SF_INSTANTIATE_DISTILL(float);
SF_INSTANTIATE_DISTILL(double);
#undef SF_INSTANTIATE_DISTILL

}  // namespace slimformer
