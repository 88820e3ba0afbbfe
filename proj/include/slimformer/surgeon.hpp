#ifndef SLIMFORMER_SURGEON_HPP
#define SLIMFORMER_SURGEON_HPP

#include "slimformer/gates.hpp"
#include "slimformer/models.hpp"

namespace slimformer {

struct SurgeryStats {
  int64_t groups_total = 0;
  int64_t groups_closed = 0;
  int64_t prunable_params_before = 0;
  int64_t prunable_params_after = 0;
  int64_t closed_param_count = 0;  // sum of closed groups' param_count
};

// Converts learned gates into physically smaller tensors. Groups whose
// deterministic gate is exactly 0 are removed (heads, hidden units, conv
// channels, ranks); fractional gate values are folded into the adjacent
// weights so the compact model computes exactly what the masked model did.
// The returned encoder is ungated.
template <typename T>
CascadedEncoder<T> surgeon(const CascadedEncoder<T>& enc, const GateSet<T>& gates,
                           SurgeryStats* stats = nullptr);

// Forward pass with the deterministic gate values applied as constant masks;
// the reference side of the masked == pruned equivalence checks.
template <typename T>
Tensor<T> masked_encoder_apply(CascadedEncoder<T>& enc, const GateSet<T>& gates,
                               const Tensor<T>& x, bool noncausal_tap, RngKey key);

// Ungated forward on a plain input, same tap selection.
template <typename T>
Tensor<T> encoder_apply(CascadedEncoder<T>& enc, const Tensor<T>& x, bool noncausal_tap,
                        RngKey key);

}  // namespace slimformer

#endif  // SLIMFORMER_SURGEON_HPP
