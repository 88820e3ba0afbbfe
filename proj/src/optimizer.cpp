#include "slimformer/optimizer.hpp"

#include <cmath>

#include "slimformer/common.hpp"

namespace slimformer {

template <typename T>
AdamW<T>::AdamW(std::vector<ParamGroup<T>> groups, AdamConfig cfg)
    : groups_(std::move(groups)), cfg_(cfg) {
  SF_CHECK_CONTRACT(cfg_.warmup_steps >= 1, "optimizer warmup must be >= 1 step");
  slots_.resize(groups_.size());
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    slots_[gi].resize(groups_[gi].params.size());
    for (size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Tensor<T>* t = groups_[gi].params[pi].tensor;
      SF_CHECK_CONTRACT(t != nullptr && t->requires_grad, "optimizer param '",
                        groups_[gi].params[pi].name, "' is null or not trainable");
      slots_[gi][pi].m.assign(t->data.size(), T(0));
      slots_[gi][pi].v.assign(t->data.size(), T(0));
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& g : groups_) {
    for (auto& p : g.params) {
      p.tensor->ensure_grad();
      p.tensor->zero_grad();
    }
  }
}

template <typename T>
double AdamW<T>::schedule(int64_t step) const {
  const double t = static_cast<double>(step);
  const double w = static_cast<double>(cfg_.warmup_steps);
  return std::min(t / w, std::sqrt(w / t));
}

template <typename T>
void AdamW<T>::step() {
  ++step_;
  const double sched = schedule(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));

  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    ParamGroup<T>& group = groups_[gi];
    const double beta2 = group.beta2_override >= 0 ? group.beta2_override : cfg_.beta2;
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    const double lr = group.base_lr * sched;
    if (gi == 0) last_lr_ = lr;
    const double dir = group.ascend ? 1.0 : -1.0;
    for (size_t pi = 0; pi < group.params.size(); ++pi) {
      Tensor<T>* t = group.params[pi].tensor;
      t->ensure_grad();
      Slot& slot = slots_[gi][pi];
      for (size_t i = 0; i < t->data.size(); ++i) {
        const double g = static_cast<double>(t->grad[i]);
        SF_CHECK(std::isfinite(g), ErrorCategory::kNumeric, "non-finite gradient in '",
                 group.params[pi].name, "' at index ", i, "; aborting optimizer step");
        const double m = cfg_.beta1 * static_cast<double>(slot.m[i]) + (1.0 - cfg_.beta1) * g;
        const double v = beta2 * static_cast<double>(slot.v[i]) + (1.0 - beta2) * g * g;
        slot.m[i] = static_cast<T>(m);
        slot.v[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        double upd = dir * lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (group.weight_decay != 0.0 && !group.ascend) {
          upd -= lr * group.weight_decay * static_cast<double>(t->data[i]);
        }
        t->data[i] = static_cast<T>(static_cast<double>(t->data[i]) + upd);
      }
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace slimformer
