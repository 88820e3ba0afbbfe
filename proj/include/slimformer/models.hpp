#ifndef SLIMFORMER_MODELS_HPP
#define SLIMFORMER_MODELS_HPP

#include <string>
#include <vector>

#include "slimformer/gates.hpp"
#include "slimformer/graph.hpp"
#include "slimformer/lowrank.hpp"

namespace slimformer {

struct ConformerConfig {
  int64_t causal_layers = 4;
  int64_t noncausal_layers = 2;
  int64_t model_dim = 32;  // divisible by heads
  int64_t heads = 4;
  int64_t ffn_mult = 4;
  int64_t conv_kernel = 7;  // odd
  int64_t vocab_size = 16;  // labels, excluding blank
  int64_t feature_dim = 16;
  int64_t max_positions = 256;
  int64_t predictor_dim = 32;
  int64_t joint_dim = 32;

  int64_t total_layers() const { return causal_layers + noncausal_layers; }
  int64_t head_dim() const { return model_dim / heads; }
  int blank_id() const { return static_cast<int>(vocab_size); }
  void validate() const;
};

enum class PruneMethod { kL0, kLrf };
enum class DecodeTap { kStreaming, kNonstreaming };

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor = nullptr;
  std::string block;  // frontend | causal | noncausal | predictor | joint | head
};

// Gate values on the tape plus the layout that assigns slices to sites.
template <typename T>
struct GateCtx {
  Val z;
  const GateLayout* layout = nullptr;
};

// Dense map, or its two-factor replacement with rank gates in between.
template <typename T>
struct LinearMap {
  Tensor<T> w;     // in_dim x out_dim
  Tensor<T> bias;  // out_dim; may be empty
  bool factorized = false;
  FactorizedLinear<T> lrf;
  int64_t gate_offset = -1;  // rank-gate slice start (factorized student only)

  int64_t in_dim() const { return factorized ? lrf.in_dim : w.dim(0); }
  int64_t out_dim() const { return factorized ? lrf.out_dim : w.dim(1); }
  int64_t weight_param_count() const {
    return factorized ? lrf.weight_param_count() : w.size();
  }
};

template <typename T>
Val linear_forward(Graph<T>& g, LinearMap<T>& map, Val x, const GateCtx<T>* gates);

template <typename T>
struct ConformerLayer {
  std::string path;
  bool causal = false;
  int64_t model_dim = 0;
  int64_t head_dim = 0;
  int64_t conv_kernel = 0;

  // retained structure (shrinks under surgery)
  int64_t n_heads = 0;
  int64_t ffn1_hidden = 0;
  int64_t ffn2_hidden = 0;
  int64_t conv_channels = 0;

  LinearMap<T> ffn1_in, ffn1_out, ffn2_in, ffn2_out;
  LinearMap<T> attn_q, attn_k, attn_v, attn_o;
  LinearMap<T> conv_pw1, conv_pw2;
  Tensor<T> conv_dw;       // channels x kernel
  Tensor<T> conv_dw_bias;  // channels

  Tensor<T> ln_ffn1_g, ln_ffn1_b, ln_attn_g, ln_attn_b, ln_conv_g, ln_conv_b;
  Tensor<T> ln_ffn2_g, ln_ffn2_b, ln_out_g, ln_out_b;

  // group gate slices (structural pruning student only)
  int64_t heads_gate_offset = -1;
  int64_t ffn1_gate_offset = -1;
  int64_t ffn2_gate_offset = -1;
  int64_t conv_gate_offset = -1;
};

template <typename T>
struct CascadedEncoder {
  ConformerConfig cfg;
  PruneMethod method = PruneMethod::kL0;  // group structure when gated
  Tensor<T> frontend_w, frontend_b;
  Tensor<T> pos;  // max_positions x model_dim, learned absolute offsets
  std::vector<ConformerLayer<T>> layers;
  GateLayout gate_layout;  // empty for ungated models

  bool gated() const { return gate_layout.total > 0; }
  std::vector<NamedParam<T>> named_params();
};

template <typename T>
CascadedEncoder<T> make_encoder(const ConformerConfig& cfg, RngKey init_key);

// Deep copy; the copy shares no storage with the original.
template <typename T>
CascadedEncoder<T> clone_encoder(const CascadedEncoder<T>& src);

// Student construction: a copy of the teacher with gates attached. For the
// structural method the copy is exact; for the factorized method every dense
// map inside the conformer layers is replaced by its truncated-SVD factors at
// rank floor(mn/(m+n)) with rank gates in between. Fills gate offsets and the
// returned encoder's gate_layout.
template <typename T>
CascadedEncoder<T> make_student(const CascadedEncoder<T>& teacher, PruneMethod method);

// Enumerates the prune groups of the encoder's current structure.
template <typename T>
GateLayout build_gate_layout(const CascadedEncoder<T>& enc, PruneMethod method);

// Same enumeration, but also writes the slice offsets into the layers/maps
// and installs the layout on the encoder (turns an ungated model gated).
template <typename T>
void attach_gate_layout(CascadedEncoder<T>& enc, PruneMethod method);
template <typename T>
std::vector<PruneGroup> build_prune_groups(const CascadedEncoder<T>& enc, PruneMethod method);

template <typename T>
struct EncoderTaps {
  std::vector<Val> layer_outputs;  // residual-stream order, one per layer
  Val causal_out;
  Val noncausal_out;
};

// x: [frames x feature_dim]. The causal block attends with a lower-triangular
// mask and causal convolutions; the non-causal block sees everything.
template <typename T>
EncoderTaps<T> encoder_forward(Graph<T>& g, CascadedEncoder<T>& enc, Val x,
                               const GateCtx<T>* gates = nullptr);

// 2*sigmoid(2x) - 1, composed from the primitive op set.
template <typename T>
Val tanh_via_sigmoid(Graph<T>& g, Val x);

}  // namespace slimformer

#endif  // SLIMFORMER_MODELS_HPP
