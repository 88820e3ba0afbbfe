#ifndef SLIMFORMER_OPTIMIZER_HPP
#define SLIMFORMER_OPTIMIZER_HPP

#include <string>
#include <vector>

#include "slimformer/tensor.hpp"

namespace slimformer {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

// One learning-rate group. Groups with `ascend` move along the gradient
// (the Lagrangian multipliers maximize the penalty the other groups minimize).
template <typename T>
struct ParamGroup {
  std::vector<ParamRef<T>> params;
  double base_lr = 1e-3;
  double weight_decay = 0.0;
  bool ascend = false;
  // < 0 means "use the shared beta2". The multipliers use a faster-forgetting
  // second moment so the ascent keeps tracking the current constraint error.
  double beta2_override = -1.0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t warmup_steps = 100;  // inverse-square-root decay after warmup
};

// Adam with decoupled weight decay. lr(t) = base_lr * min(t/warmup, sqrt(warmup/t)).
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<ParamGroup<T>> groups, AdamConfig cfg);

  void zero_grad();
  void step();

  int64_t step_count() const { return step_; }
  double schedule(int64_t step) const;
  double last_lr() const { return last_lr_; }  // scheduled lr of group 0

 private:
  struct Slot {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::vector<ParamGroup<T>> groups_;
  std::vector<std::vector<Slot>> slots_;
  AdamConfig cfg_;
  int64_t step_ = 0;
  double last_lr_ = 0.0;
};

}  // namespace slimformer

#endif  // SLIMFORMER_OPTIMIZER_HPP
