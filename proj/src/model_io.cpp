#include "slimformer/model_io.hpp"

namespace slimformer {

using nlohmann::json;

nlohmann::json conformer_config_to_json(const ConformerConfig& cfg) {
  return json{{"causal_layers", cfg.causal_layers},
              {"noncausal_layers", cfg.noncausal_layers},
              {"model_dim", cfg.model_dim},
              {"heads", cfg.heads},
              {"ffn_mult", cfg.ffn_mult},
              {"conv_kernel", cfg.conv_kernel},
              {"vocab_size", cfg.vocab_size},
              {"feature_dim", cfg.feature_dim},
              {"max_positions", cfg.max_positions},
              {"predictor_dim", cfg.predictor_dim},
              {"joint_dim", cfg.joint_dim}};
}

ConformerConfig conformer_config_from_json(const json& j) {
  ConformerConfig cfg;
  cfg.causal_layers = j.at("causal_layers").get<int64_t>();
  cfg.noncausal_layers = j.at("noncausal_layers").get<int64_t>();
  cfg.model_dim = j.at("model_dim").get<int64_t>();
  cfg.heads = j.at("heads").get<int64_t>();
  cfg.ffn_mult = j.at("ffn_mult").get<int64_t>();
  cfg.conv_kernel = j.at("conv_kernel").get<int64_t>();
  cfg.vocab_size = j.at("vocab_size").get<int64_t>();
  cfg.feature_dim = j.at("feature_dim").get<int64_t>();
  cfg.max_positions = j.at("max_positions").get<int64_t>();
  cfg.predictor_dim = j.at("predictor_dim").get<int64_t>();
  cfg.joint_dim = j.at("joint_dim").get<int64_t>();
  return cfg;
}

namespace {

template <typename T>
json map_structure(const LinearMap<T>& m) {
  if (m.factorized) return json{{"rank", m.lrf.rank}};
  return json(nullptr);
}

template <typename T>
json layer_structure(const ConformerLayer<T>& l) {
  json js{{"heads", l.n_heads},
          {"ffn1", l.ffn1_hidden},
          {"ffn2", l.ffn2_hidden},
          {"conv", l.conv_channels},
          {"factorized", l.ffn1_in.factorized}};
  if (l.ffn1_in.factorized) {
    js["ranks"] = json{{"ffn1_in", l.ffn1_in.lrf.rank},   {"ffn1_out", l.ffn1_out.lrf.rank},
                       {"ffn2_in", l.ffn2_in.lrf.rank},   {"ffn2_out", l.ffn2_out.lrf.rank},
                       {"q", l.attn_q.lrf.rank},          {"k", l.attn_k.lrf.rank},
                       {"v", l.attn_v.lrf.rank},          {"o", l.attn_o.lrf.rank},
                       {"pw1", l.conv_pw1.lrf.rank},      {"pw2", l.conv_pw2.lrf.rank}};
  }
  return js;
}

template <typename T>
void make_factorized_shell(LinearMap<T>& m, int64_t in, int64_t out, int64_t rank) {
  m.factorized = true;
  m.lrf.in_dim = in;
  m.lrf.out_dim = out;
  m.lrf.rank = rank;
  m.lrf.a = Tensor<T>::zeros({in, rank});
  m.lrf.b = Tensor<T>::zeros({out, rank});
  m.lrf.bias = Tensor<T>::zeros({out});
  m.lrf.a.requires_grad = m.lrf.b.requires_grad = m.lrf.bias.requires_grad = true;
  m.w = Tensor<T>();
  m.bias = Tensor<T>();
}

template <typename T>
void resize_dense(LinearMap<T>& m, int64_t in, int64_t out) {
  m.w = Tensor<T>::zeros({in, out});
  m.bias = Tensor<T>::zeros({out});
  m.w.requires_grad = m.bias.requires_grad = true;
}

// Reshape a freshly constructed full-size encoder to the structural dims
// recorded in a checkpoint (retained heads / units / channels / ranks).
template <typename T>
void apply_structure(CascadedEncoder<T>& enc, const json& structure) {
  SF_CHECK(structure.is_array() && structure.size() == enc.layers.size(), ErrorCategory::kIo,
           "checkpoint structure does not match layer count");
  for (size_t li = 0; li < enc.layers.size(); ++li) {
    ConformerLayer<T>& l = enc.layers[li];
    const json& js = structure[li];
    const int64_t d = l.model_dim;
    l.n_heads = js.at("heads").get<int64_t>();
    l.ffn1_hidden = js.at("ffn1").get<int64_t>();
    l.ffn2_hidden = js.at("ffn2").get<int64_t>();
    l.conv_channels = js.at("conv").get<int64_t>();
    if (js.at("factorized").get<bool>()) {
      const json& ranks = js.at("ranks");
      const int64_t h1 = l.ffn1_hidden, h2 = l.ffn2_hidden, c = l.conv_channels;
      make_factorized_shell(l.ffn1_in, d, h1, ranks.at("ffn1_in").get<int64_t>());
      make_factorized_shell(l.ffn1_out, h1, d, ranks.at("ffn1_out").get<int64_t>());
      make_factorized_shell(l.ffn2_in, d, h2, ranks.at("ffn2_in").get<int64_t>());
      make_factorized_shell(l.ffn2_out, h2, d, ranks.at("ffn2_out").get<int64_t>());
      make_factorized_shell(l.attn_q, d, l.n_heads * l.head_dim, ranks.at("q").get<int64_t>());
      make_factorized_shell(l.attn_k, d, l.n_heads * l.head_dim, ranks.at("k").get<int64_t>());
      make_factorized_shell(l.attn_v, d, l.n_heads * l.head_dim, ranks.at("v").get<int64_t>());
      make_factorized_shell(l.attn_o, l.n_heads * l.head_dim, d, ranks.at("o").get<int64_t>());
      make_factorized_shell(l.conv_pw1, d, 2 * c, ranks.at("pw1").get<int64_t>());
      make_factorized_shell(l.conv_pw2, c, d, ranks.at("pw2").get<int64_t>());
    } else {
      resize_dense(l.ffn1_in, d, l.ffn1_hidden);
      resize_dense(l.ffn1_out, l.ffn1_hidden, d);
      resize_dense(l.ffn2_in, d, l.ffn2_hidden);
      resize_dense(l.ffn2_out, l.ffn2_hidden, d);
      resize_dense(l.attn_q, d, l.n_heads * l.head_dim);
      resize_dense(l.attn_k, d, l.n_heads * l.head_dim);
      resize_dense(l.attn_v, d, l.n_heads * l.head_dim);
      resize_dense(l.attn_o, l.n_heads * l.head_dim, d);
      resize_dense(l.conv_pw1, d, 2 * l.conv_channels);
      resize_dense(l.conv_pw2, l.conv_channels, d);
    }
    l.conv_dw = Tensor<T>::zeros({l.conv_channels, l.conv_kernel});
    l.conv_dw_bias = Tensor<T>::zeros({l.conv_channels});
    l.conv_dw.requires_grad = l.conv_dw_bias.requires_grad = true;
  }
}

template <typename T>
void put_params(Container& c, const std::vector<NamedParam<T>>& params) {
  for (const auto& p : params) c.put_tensor(p.name, *p.tensor);
}

template <typename T>
void fill_params(const Container& c, const std::vector<NamedParam<T>>& params) {
  for (const auto& p : params) {
    SF_CHECK(c.has(p.name), ErrorCategory::kIo, "topology mismatch: checkpoint lacks tensor '",
             p.name, "'");
    Tensor<T> loaded = c.get_tensor<T>(p.name);
    SF_CHECK(loaded.shape == p.tensor->shape, ErrorCategory::kIo,
             "topology mismatch at tensor '", p.name, "': checkpoint ", shape_str(loaded.shape),
             " vs model ", shape_str(p.tensor->shape));
    p.tensor->data = std::move(loaded.data);
  }
}

}  // namespace

template <typename T>
void save_encoder(Container& c, CascadedEncoder<T>& enc) {
  c.meta["model_config"] = conformer_config_to_json(enc.cfg);
  c.meta["method"] = enc.method == PruneMethod::kLrf ? "lrf" : "l0";
  c.meta["gated"] = enc.gated();
  json structure = json::array();
  for (const auto& l : enc.layers) structure.push_back(layer_structure(l));
  c.meta["structure"] = structure;
  put_params(c, enc.named_params());
}

template <typename T>
CascadedEncoder<T> load_encoder(const Container& c) {
  ConformerConfig cfg = conformer_config_from_json(c.meta.at("model_config"));
  CascadedEncoder<T> enc = make_encoder<T>(cfg, RngKey(0, 0));
  enc.method = c.meta.value("method", "l0") == "lrf" ? PruneMethod::kLrf : PruneMethod::kL0;
  apply_structure(enc, c.meta.at("structure"));
  fill_params(c, enc.named_params());
  if (c.meta.value("gated", false)) attach_gate_layout(enc, enc.method);
  return enc;
}

template <typename T>
void save_gates(Container& c, const CascadedEncoder<T>& enc, const GateSet<T>& gates,
                const LagrangianState<T>& lagrangian) {
  SF_CHECK_CONTRACT(gates.size() == enc.gate_layout.total, "gate/layout mismatch");
  for (const GateSite& site : enc.gate_layout.sites) {
    Tensor<T> slice({site.count});
    for (int64_t i = 0; i < site.count; ++i) slice.at(i) = gates.log_alpha.at(site.offset + i);
    c.put_tensor("gates/" + site.path + "/log_alpha", slice);
  }
  c.meta["gate_constants"] = json{{"beta", static_cast<double>(gates.beta)},
                                  {"stretch_lo", static_cast<double>(gates.stretch_lo)},
                                  {"stretch_hi", static_cast<double>(gates.stretch_hi)}};
  Tensor<T> l1 = lagrangian.lambda1, l2 = lagrangian.lambda2;
  c.put_tensor("lagrangian/lambda1", l1);
  c.put_tensor("lagrangian/lambda2", l2);
  c.put_tensor("lagrangian/t", Tensor<T>::scalar(static_cast<T>(lagrangian.target_sparsity)));
}

template <typename T>
void load_gates(const Container& c, const CascadedEncoder<T>& enc, GateSet<T>& gates,
                LagrangianState<T>& lagrangian) {
  const json& gc = c.meta.at("gate_constants");
  gates = GateSet<T>(enc.gate_layout.total, T(0), static_cast<T>(gc.at("beta").get<double>()),
                     static_cast<T>(gc.at("stretch_lo").get<double>()),
                     static_cast<T>(gc.at("stretch_hi").get<double>()));
  for (const GateSite& site : enc.gate_layout.sites) {
    Tensor<T> slice = c.get_tensor<T>("gates/" + site.path + "/log_alpha");
    SF_CHECK(slice.size() == site.count, ErrorCategory::kIo, "gate slice size mismatch at '",
             site.path, "'");
    for (int64_t i = 0; i < site.count; ++i) gates.log_alpha.at(site.offset + i) = slice.at(i);
  }
  lagrangian.lambda1 = c.get_tensor<T>("lagrangian/lambda1");
  lagrangian.lambda2 = c.get_tensor<T>("lagrangian/lambda2");
  lagrangian.lambda1.requires_grad = lagrangian.lambda2.requires_grad = true;
  lagrangian.target_sparsity =
      static_cast<double>(c.get_tensor<T>("lagrangian/t").at(0));
}

// ---------------------------------------------------------------------------
// Model wrappers
// ---------------------------------------------------------------------------

template <typename T>
std::vector<NamedParam<T>> PretextModel<T>::trainable_params() {
  std::vector<NamedParam<T>> out = encoder.named_params();
  out.push_back({"pretext_head/w", &head_w, "head"});
  out.push_back({"pretext_head/bias", &head_b, "head"});
  return out;
}

template <typename T>
std::vector<NamedParam<T>> AsrModel<T>::trainable_params() {
  std::vector<NamedParam<T>> out = encoder.named_params();
  for (auto& p : predictor.named_params()) out.push_back(p);
  for (auto& p : joint.named_params()) out.push_back(p);
  return out;
}

template <typename T>
void save_pretext_model(PretextModel<T>& m, const std::string& path, const json& extra_meta) {
  Container c;
  save_encoder(c, m.encoder);
  c.put_tensor("pretext_head/w", m.head_w);
  c.put_tensor("pretext_head/bias", m.head_b);
  c.put_tensor("quantizer/proj", m.quant_proj);
  c.put_tensor("quantizer/codebook", m.codebook);
  c.meta["kind"] = "pretext";
  if (!extra_meta.is_null()) c.meta["run"] = extra_meta;
  c.save(path);
}

template <typename T>
PretextModel<T> load_pretext_model(const std::string& path) {
  Container c = Container::load(path);
  SF_CHECK(c.meta.value("kind", "") == "pretext", ErrorCategory::kIo, "'", path,
           "' is not a pretext checkpoint");
  PretextModel<T> m;
  m.encoder = load_encoder<T>(c);
  m.head_w = c.get_tensor<T>("pretext_head/w");
  m.head_b = c.get_tensor<T>("pretext_head/bias");
  m.quant_proj = c.get_tensor<T>("quantizer/proj");
  m.codebook = c.get_tensor<T>("quantizer/codebook");
  m.head_w.requires_grad = m.head_b.requires_grad = true;
  return m;
}

template <typename T>
void save_asr_model(AsrModel<T>& m, const std::string& path, const json& extra_meta) {
  Container c;
  save_encoder(c, m.encoder);
  put_params(c, m.predictor.named_params());
  put_params(c, m.joint.named_params());
  c.meta["kind"] = "asr";
  if (!extra_meta.is_null()) c.meta["run"] = extra_meta;
  c.save(path);
}

template <typename T>
AsrModel<T> load_asr_model(const std::string& path) {
  Container c = Container::load(path);
  SF_CHECK(c.meta.value("kind", "") == "asr", ErrorCategory::kIo, "'", path,
           "' is not an asr checkpoint");
  AsrModel<T> m;
  m.encoder = load_encoder<T>(c);
  ConformerConfig cfg = m.encoder.cfg;
  m.predictor = make_predictor<T>(cfg, RngKey(0, 0));
  m.joint = make_joint<T>(cfg, RngKey(0, 0));
  fill_params(c, m.predictor.named_params());
  fill_params(c, m.joint.named_params());
  return m;
}

nlohmann::json checkpoint_meta(const std::string& path) { return Container::load(path).meta; }

#define SF_INSTANTIATE_MODEL_IO(T)                                                          \
  template void save_encoder<T>(Container&, CascadedEncoder<T>&);                           \
  template CascadedEncoder<T> load_encoder<T>(const Container&);                            \
  template void save_gates<T>(Container&, const CascadedEncoder<T>&, const GateSet<T>&,     \
                              const LagrangianState<T>&);                                   \
  template void load_gates<T>(const Container&, const CascadedEncoder<T>&, GateSet<T>&,     \
                              LagrangianState<T>&);                                         \
  template std::vector<NamedParam<T>> PretextModel<T>::trainable_params();                  \
  template std::vector<NamedParam<T>> AsrModel<T>::trainable_params();                      \
  template void save_pretext_model<T>(PretextModel<T>&, const std::string&,                 \
                                      const nlohmann::json&);                               \
  template PretextModel<T> load_pretext_model<T>(const std::string&);                       \
  template void save_asr_model<T>(AsrModel<T>&, const std::string&, const nlohmann::json&); \
  template AsrModel<T> load_asr_model<T>(const std::string&)

SF_INSTANTIATE_MODEL_IO(float);
SF_INSTANTIATE_MODEL_IO(double);
#undef SF_INSTANTIATE_MODEL_IO

}  // namespace slimformer
