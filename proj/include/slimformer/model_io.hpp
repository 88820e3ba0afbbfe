#ifndef SLIMFORMER_MODEL_IO_HPP
#define SLIMFORMER_MODEL_IO_HPP

#include <optional>
#include <string>

#include "slimformer/checkpoint.hpp"
#include "slimformer/gates.hpp"
#include "slimformer/models.hpp"
#include "slimformer/transducer.hpp"

namespace slimformer {

// Pretraining wrapper: encoder, a linear classification head over the frozen
// random-projection codebook, and the quantizer itself.
template <typename T>
struct PretextModel {
  CascadedEncoder<T> encoder;
  Tensor<T> head_w, head_b;    // model_dim -> codebook_size
  Tensor<T> quant_proj;        // feature_dim x proj_dim, frozen
  Tensor<T> codebook;          // codebook_size x proj_dim, frozen

  std::vector<NamedParam<T>> trainable_params();
};

template <typename T>
struct AsrModel {
  CascadedEncoder<T> encoder;
  Predictor<T> predictor;
  Joint<T> joint;

  std::vector<NamedParam<T>> trainable_params();
};

nlohmann::json conformer_config_to_json(const ConformerConfig& cfg);
ConformerConfig conformer_config_from_json(const nlohmann::json& j);

// Encoder (de)serialization carries the structural dims (retained heads,
// hidden units, channels, per-map ranks) in the header so compact models
// reload exactly. Loading validates topology and names the first mismatched
// tensor on failure.
template <typename T>
void save_encoder(Container& c, CascadedEncoder<T>& enc);
template <typename T>
CascadedEncoder<T> load_encoder(const Container& c);

// Gate state lives under gates/<site-path>/log_alpha plus lagrangian/{...}.
template <typename T>
void save_gates(Container& c, const CascadedEncoder<T>& enc, const GateSet<T>& gates,
                const LagrangianState<T>& lagrangian);
template <typename T>
void load_gates(const Container& c, const CascadedEncoder<T>& enc, GateSet<T>& gates,
                LagrangianState<T>& lagrangian);

template <typename T>
void save_pretext_model(PretextModel<T>& m, const std::string& path,
                        const nlohmann::json& extra_meta = {});
template <typename T>
PretextModel<T> load_pretext_model(const std::string& path);

template <typename T>
void save_asr_model(AsrModel<T>& m, const std::string& path,
                    const nlohmann::json& extra_meta = {});
template <typename T>
AsrModel<T> load_asr_model(const std::string& path);

nlohmann::json checkpoint_meta(const std::string& path);

}  // namespace slimformer

#endif  // SLIMFORMER_MODEL_IO_HPP
