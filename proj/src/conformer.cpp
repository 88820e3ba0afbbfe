#include <cmath>

#include "slimformer/models.hpp"

namespace slimformer {

void ConformerConfig::validate() const {
  SF_CHECK(model_dim % heads == 0, ErrorCategory::kConfig, "model_dim ", model_dim,
           " not divisible by heads ", heads);
  SF_CHECK(causal_layers >= 1 && noncausal_layers >= 1, ErrorCategory::kConfig,
           "both encoder blocks need at least one layer");
  SF_CHECK(conv_kernel >= 1 && conv_kernel % 2 == 1, ErrorCategory::kConfig,
           "conv_kernel must be odd, got ", conv_kernel);
  SF_CHECK(vocab_size >= 2, ErrorCategory::kConfig, "vocab_size must be >= 2");
  SF_CHECK(feature_dim >= 1 && model_dim >= 1, ErrorCategory::kConfig, "bad dimensions");
}

template <typename T>
Val tanh_via_sigmoid(Graph<T>& g, Val x) {
  return g.add(g.scale(g.sigmoid(g.scale(x, T(2))), T(2)), g.constant_scalar(T(-1)));
}

namespace {

template <typename T>
Tensor<T> init_weight(int64_t in, int64_t out, const RngKey& key, const std::string& name) {
  return Tensor<T>::randn({in, out}, key.derive(name), 1.0 / std::sqrt(static_cast<double>(in)));
}

template <typename T>
void mark_trainable(Tensor<T>& t) {
  t.requires_grad = true;
}

template <typename T>
LinearMap<T> make_dense(int64_t in, int64_t out, const RngKey& key, const std::string& name) {
  LinearMap<T> m;
  m.w = init_weight<T>(in, out, key, name + "/w");
  m.bias = Tensor<T>::zeros({out});
  mark_trainable(m.w);
  mark_trainable(m.bias);
  return m;
}

template <typename T>
void ln_params(Tensor<T>& gscale, Tensor<T>& gbias, int64_t dim) {
  gscale = Tensor<T>::full({dim}, T(1));
  gbias = Tensor<T>::zeros({dim});
  mark_trainable(gscale);
  mark_trainable(gbias);
}

template <typename T>
Val ln_affine(Graph<T>& g, Val x, Tensor<T>& gamma, Tensor<T>& beta) {
  return g.add(g.mul(g.layernorm(x, -1), g.leaf(&gamma)), g.leaf(&beta));
}

template <typename T>
Val gate_slice(Graph<T>& g, const GateCtx<T>* gates, int64_t offset, int64_t count) {
  (void)g;
  if (gates == nullptr || offset < 0) return Val{};
  return g.slice(gates->z, 0, offset, count);
}

// Lower-triangular additive mask; exp underflows masked scores to exactly 0.
template <typename T>
Tensor<T> causal_mask(int64_t t) {
  Tensor<T> m({t, t});
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t j = i + 1; j < t; ++j) m.at(i, j) = T(-1e9);
  }
  return m;
}

}  // namespace

template <typename T>
Val linear_forward(Graph<T>& g, LinearMap<T>& map, Val x, const GateCtx<T>* gates) {
  if (map.factorized) {
    Val z = gate_slice(g, gates, map.gate_offset, map.lrf.rank);
    return factorized_forward(g, map.lrf, x, z);
  }
  Val out = g.matmul(x, g.leaf(&map.w));
  if (map.bias.size() > 0) out = g.add(out, g.leaf(&map.bias));
  return out;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

template <typename T>
ConformerLayer<T> make_layer(const ConformerConfig& cfg, bool causal, const std::string& path,
                             const RngKey& key) {
  ConformerLayer<T> l;
  l.path = path;
  l.causal = causal;
  l.model_dim = cfg.model_dim;
  l.head_dim = cfg.head_dim();
  l.conv_kernel = cfg.conv_kernel;
  l.n_heads = cfg.heads;
  l.ffn1_hidden = cfg.ffn_mult * cfg.model_dim;
  l.ffn2_hidden = cfg.ffn_mult * cfg.model_dim;
  l.conv_channels = cfg.model_dim;

  const int64_t d = cfg.model_dim;
  l.ffn1_in = make_dense<T>(d, l.ffn1_hidden, key, path + "/ffn1_in");
  l.ffn1_out = make_dense<T>(l.ffn1_hidden, d, key, path + "/ffn1_out");
  l.ffn2_in = make_dense<T>(d, l.ffn2_hidden, key, path + "/ffn2_in");
  l.ffn2_out = make_dense<T>(l.ffn2_hidden, d, key, path + "/ffn2_out");
  l.attn_q = make_dense<T>(d, d, key, path + "/q");
  l.attn_k = make_dense<T>(d, d, key, path + "/k");
  l.attn_v = make_dense<T>(d, d, key, path + "/v");
  l.attn_o = make_dense<T>(d, d, key, path + "/o");
  l.conv_pw1 = make_dense<T>(d, 2 * l.conv_channels, key, path + "/pw1");
  l.conv_pw2 = make_dense<T>(l.conv_channels, d, key, path + "/pw2");
  l.conv_dw = Tensor<T>::randn({l.conv_channels, cfg.conv_kernel}, key.derive(path + "/dw"),
                               1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)));
  l.conv_dw_bias = Tensor<T>::zeros({l.conv_channels});
  mark_trainable(l.conv_dw);
  mark_trainable(l.conv_dw_bias);

  ln_params(l.ln_ffn1_g, l.ln_ffn1_b, d);
  ln_params(l.ln_attn_g, l.ln_attn_b, d);
  ln_params(l.ln_conv_g, l.ln_conv_b, d);
  ln_params(l.ln_ffn2_g, l.ln_ffn2_b, d);
  ln_params(l.ln_out_g, l.ln_out_b, d);
  return l;
}

}  // namespace

template <typename T>
CascadedEncoder<T> make_encoder(const ConformerConfig& cfg, RngKey init_key) {
  cfg.validate();
  CascadedEncoder<T> enc;
  enc.cfg = cfg;
  enc.frontend_w = init_weight<T>(cfg.feature_dim, cfg.model_dim, init_key, "frontend/w");
  enc.frontend_b = Tensor<T>::zeros({cfg.model_dim});
  enc.pos = Tensor<T>::randn({cfg.max_positions, cfg.model_dim}, init_key.derive("pos"), 0.1);
  mark_trainable(enc.frontend_w);
  mark_trainable(enc.frontend_b);
  mark_trainable(enc.pos);
  for (int64_t i = 0; i < cfg.total_layers(); ++i) {
    const bool causal = i < cfg.causal_layers;
    const std::string path =
        str("encoder/", causal ? "causal" : "noncausal", "/layer", causal ? i : i - cfg.causal_layers);
    enc.layers.push_back(make_layer<T>(cfg, causal, path, init_key));
  }
  return enc;
}

template <typename T>
CascadedEncoder<T> clone_encoder(const CascadedEncoder<T>& src) {
  return src;  // value semantics; all tensors copy
}

// ---------------------------------------------------------------------------
// Prune-group layout
// ---------------------------------------------------------------------------

namespace {

template <typename T>
GateLayout layout_impl(const CascadedEncoder<T>& enc, PruneMethod method,
                       CascadedEncoder<T>* attach) {
  GateLayout layout;
  int64_t offset = 0;
  auto add_site = [&](const std::string& path, GroupKind kind, int64_t count, int64_t ppg,
                      int64_t* attach_offset) {
    if (count <= 0) return;
    layout.sites.push_back(GateSite{path, kind, offset, count, ppg});
    if (attach_offset != nullptr) *attach_offset = offset;
    offset += count;
  };

  for (size_t li = 0; li < enc.layers.size(); ++li) {
    const ConformerLayer<T>& l = enc.layers[li];
    ConformerLayer<T>* ml = attach ? &attach->layers[li] : nullptr;
    const int64_t d = l.model_dim;
    if (method == PruneMethod::kL0) {
      add_site(l.path + "/ffn1", GroupKind::kFfnHiddenUnit, l.ffn1_hidden, 2 * d,
               ml ? &ml->ffn1_gate_offset : nullptr);
      add_site(l.path + "/heads", GroupKind::kAttentionHead, l.n_heads, 4 * l.head_dim * d,
               ml ? &ml->heads_gate_offset : nullptr);
      add_site(l.path + "/conv", GroupKind::kConvPointwiseChannel, l.conv_channels,
               3 * d + l.conv_kernel, ml ? &ml->conv_gate_offset : nullptr);
      add_site(l.path + "/ffn2", GroupKind::kFfnHiddenUnit, l.ffn2_hidden, 2 * d,
               ml ? &ml->ffn2_gate_offset : nullptr);
    } else {
      auto add_map = [&](const char* name, const LinearMap<T>& m, LinearMap<T>* mm) {
        SF_CHECK_CONTRACT(m.factorized, "factorized layout requested on a dense map");
        add_site(l.path + "/" + name, GroupKind::kLrfRank, m.lrf.rank,
                 m.lrf.in_dim + m.lrf.out_dim, mm ? &mm->gate_offset : nullptr);
      };
      add_map("ffn1_in", l.ffn1_in, ml ? &ml->ffn1_in : nullptr);
      add_map("ffn1_out", l.ffn1_out, ml ? &ml->ffn1_out : nullptr);
      add_map("q", l.attn_q, ml ? &ml->attn_q : nullptr);
      add_map("k", l.attn_k, ml ? &ml->attn_k : nullptr);
      add_map("v", l.attn_v, ml ? &ml->attn_v : nullptr);
      add_map("o", l.attn_o, ml ? &ml->attn_o : nullptr);
      add_map("pw1", l.conv_pw1, ml ? &ml->conv_pw1 : nullptr);
      add_map("pw2", l.conv_pw2, ml ? &ml->conv_pw2 : nullptr);
      add_map("ffn2_in", l.ffn2_in, ml ? &ml->ffn2_in : nullptr);
      add_map("ffn2_out", l.ffn2_out, ml ? &ml->ffn2_out : nullptr);
    }
  }
  layout.total = offset;
  return layout;
}

template <typename T>
void factorize_map(LinearMap<T>& m) {
  const int64_t in = m.w.dim(0), out = m.w.dim(1);
  const int64_t r = std::min(init_rank(in, out), std::min(in, out));
  m.lrf = factorize(m.w, r, m.bias);
  m.factorized = true;
  m.w = Tensor<T>();
  m.bias = Tensor<T>();
}

}  // namespace

template <typename T>
GateLayout build_gate_layout(const CascadedEncoder<T>& enc, PruneMethod method) {
  return layout_impl(enc, method, static_cast<CascadedEncoder<T>*>(nullptr));
}

template <typename T>
std::vector<PruneGroup> build_prune_groups(const CascadedEncoder<T>& enc, PruneMethod method) {
  return build_gate_layout(enc, method).groups();
}

template <typename T>
void attach_gate_layout(CascadedEncoder<T>& enc, PruneMethod method) {
  enc.method = method;
  enc.gate_layout = layout_impl(enc, method, &enc);
}

template <typename T>
CascadedEncoder<T> make_student(const CascadedEncoder<T>& teacher, PruneMethod method) {
  CascadedEncoder<T> student = clone_encoder(teacher);
  student.method = method;
  if (method == PruneMethod::kLrf) {
    for (ConformerLayer<T>& l : student.layers) {
      factorize_map(l.ffn1_in);
      factorize_map(l.ffn1_out);
      factorize_map(l.ffn2_in);
      factorize_map(l.ffn2_out);
      factorize_map(l.attn_q);
      factorize_map(l.attn_k);
      factorize_map(l.attn_v);
      factorize_map(l.attn_o);
      factorize_map(l.conv_pw1);
      factorize_map(l.conv_pw2);
    }
  }
  attach_gate_layout(student, method);
  return student;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Val bias_only(Graph<T>& g, int64_t t, int64_t dim, Tensor<T>* bias) {
  Val out = g.zeros({t, dim});
  if (bias != nullptr && bias->size() > 0) out = g.add(out, g.leaf(bias));
  return out;
}

template <typename T>
Val ffn_block(Graph<T>& g, ConformerLayer<T>& l, Val x, bool second, const GateCtx<T>* gates) {
  LinearMap<T>& w_in = second ? l.ffn2_in : l.ffn1_in;
  LinearMap<T>& w_out = second ? l.ffn2_out : l.ffn1_out;
  Tensor<T>& lng = second ? l.ln_ffn2_g : l.ln_ffn1_g;
  Tensor<T>& lnb = second ? l.ln_ffn2_b : l.ln_ffn1_b;
  const int64_t hidden = second ? l.ffn2_hidden : l.ffn1_hidden;
  const int64_t gate_off = second ? l.ffn2_gate_offset : l.ffn1_gate_offset;

  Val h = ln_affine(g, x, lng, lnb);
  if (hidden == 0) {
    return bias_only(g, g.value(x).dim(0), l.model_dim, &w_out.bias);
  }
  Val a = g.swish(linear_forward(g, w_in, h, gates));
  Val z = gate_slice(g, gates, gate_off, hidden);
  if (z.valid()) a = g.mul(a, z);
  return linear_forward(g, w_out, a, gates);
}

template <typename T>
Val attention_block(Graph<T>& g, ConformerLayer<T>& l, Val x, const GateCtx<T>* gates) {
  const int64_t t = g.value(x).dim(0);
  Val h = ln_affine(g, x, l.ln_attn_g, l.ln_attn_b);
  if (l.n_heads == 0) {
    return bias_only(g, t, l.model_dim, &l.attn_o.bias);
  }
  Val q = linear_forward(g, l.attn_q, h, gates);
  Val k = linear_forward(g, l.attn_k, h, gates);
  Val v = linear_forward(g, l.attn_v, h, gates);
  Val z = gate_slice(g, gates, l.heads_gate_offset, l.n_heads);

  Val mask{};
  if (l.causal) mask = g.constant(causal_mask<T>(t));

  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(l.head_dim)));
  std::vector<Val> heads;
  for (int64_t hh = 0; hh < l.n_heads; ++hh) {
    Val qh = g.slice(q, 1, hh * l.head_dim, l.head_dim);
    Val kh = g.slice(k, 1, hh * l.head_dim, l.head_dim);
    Val vh = g.slice(v, 1, hh * l.head_dim, l.head_dim);
    Val scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    if (mask.valid()) scores = g.add(scores, mask);
    Val ctx = g.matmul(g.softmax(scores, -1), vh);
    if (z.valid()) ctx = g.mul(ctx, g.slice(z, 0, hh, 1));
    heads.push_back(ctx);
  }
  Val ctx_all = heads.size() == 1 ? heads[0] : g.concat(heads, 1);
  return linear_forward(g, l.attn_o, ctx_all, gates);
}

template <typename T>
Val conv_block(Graph<T>& g, ConformerLayer<T>& l, Val x, const GateCtx<T>* gates) {
  const int64_t t = g.value(x).dim(0);
  Val h = ln_affine(g, x, l.ln_conv_g, l.ln_conv_b);
  if (l.conv_channels == 0) {
    return bias_only(g, t, l.model_dim, &l.conv_pw2.bias);
  }
  Val p = linear_forward(g, l.conv_pw1, h, gates);
  Val val = g.slice(p, 1, 0, l.conv_channels);
  Val gating = g.sigmoid(g.slice(p, 1, l.conv_channels, l.conv_channels));
  Val u = g.mul(val, gating);  // GLU
  Val c = g.conv1d_depthwise(u, g.leaf(&l.conv_dw), g.leaf(&l.conv_dw_bias), l.causal);
  c = g.swish(c);
  Val z = gate_slice(g, gates, l.conv_gate_offset, l.conv_channels);
  if (z.valid()) c = g.mul(c, z);
  return linear_forward(g, l.conv_pw2, c, gates);
}

template <typename T>
Val layer_forward(Graph<T>& g, ConformerLayer<T>& l, Val x, const GateCtx<T>* gates) {
  x = g.add(x, g.scale(ffn_block(g, l, x, /*second=*/false, gates), T(0.5)));
  x = g.add(x, attention_block(g, l, x, gates));
  x = g.add(x, conv_block(g, l, x, gates));
  x = g.add(x, g.scale(ffn_block(g, l, x, /*second=*/true, gates), T(0.5)));
  return ln_affine(g, x, l.ln_out_g, l.ln_out_b);
}

}  // namespace

template <typename T>
EncoderTaps<T> encoder_forward(Graph<T>& g, CascadedEncoder<T>& enc, Val x,
                               const GateCtx<T>* gates) {
  const Tensor<T>& xv = g.value(x);
  SF_CHECK_CONTRACT(xv.rank() == 2 && xv.dim(1) == enc.cfg.feature_dim, "encoder input ",
                    shape_str(xv.shape), " vs feature_dim ", enc.cfg.feature_dim);
  const int64_t t = xv.dim(0);
  SF_CHECK_CONTRACT(t >= 1, "encoder needs at least one frame");
  SF_CHECK_CONTRACT(t <= enc.cfg.max_positions, "sequence length ", t,
                    " exceeds max_positions ", enc.cfg.max_positions);

  Val h = g.add(g.matmul(x, g.leaf(&enc.frontend_w)), g.leaf(&enc.frontend_b));
  h = g.add(h, g.slice(g.leaf(&enc.pos), 0, 0, t));

  EncoderTaps<T> taps;
  for (size_t li = 0; li < enc.layers.size(); ++li) {
    h = layer_forward(g, enc.layers[li], h, gates);
    SF_CHECK(g.value(h).all_finite(), ErrorCategory::kNumeric,
             "non-finite activations after layer ", li, " (", enc.layers[li].path, ")");
    taps.layer_outputs.push_back(h);
  }
  taps.causal_out = taps.layer_outputs[static_cast<size_t>(enc.cfg.causal_layers - 1)];
  taps.noncausal_out = taps.layer_outputs.back();
  return taps;
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void map_params(std::vector<NamedParam<T>>& out, LinearMap<T>& m, const std::string& path,
                const std::string& block) {
  if (m.factorized) {
    out.push_back({"lrf/" + path + "/A", &m.lrf.a, block});
    out.push_back({"lrf/" + path + "/B", &m.lrf.b, block});
    if (m.lrf.has_bias()) out.push_back({"lrf/" + path + "/bias", &m.lrf.bias, block});
  } else {
    out.push_back({path + "/w", &m.w, block});
    if (m.bias.size() > 0) out.push_back({path + "/bias", &m.bias, block});
  }
}

}  // namespace

template <typename T>
std::vector<NamedParam<T>> CascadedEncoder<T>::named_params() {
  std::vector<NamedParam<T>> out;
  out.push_back({"encoder/frontend/w", &frontend_w, "frontend"});
  out.push_back({"encoder/frontend/bias", &frontend_b, "frontend"});
  out.push_back({"encoder/pos", &pos, "frontend"});
  for (ConformerLayer<T>& l : layers) {
    const std::string block = l.causal ? "causal" : "noncausal";
    map_params(out, l.ffn1_in, l.path + "/ffn1_in", block);
    map_params(out, l.ffn1_out, l.path + "/ffn1_out", block);
    map_params(out, l.ffn2_in, l.path + "/ffn2_in", block);
    map_params(out, l.ffn2_out, l.path + "/ffn2_out", block);
    map_params(out, l.attn_q, l.path + "/q", block);
    map_params(out, l.attn_k, l.path + "/k", block);
    map_params(out, l.attn_v, l.path + "/v", block);
    map_params(out, l.attn_o, l.path + "/o", block);
    map_params(out, l.conv_pw1, l.path + "/pw1", block);
    map_params(out, l.conv_pw2, l.path + "/pw2", block);
    out.push_back({l.path + "/dw", &l.conv_dw, block});
    out.push_back({l.path + "/dw_bias", &l.conv_dw_bias, block});
    auto ln = [&](const char* name, Tensor<T>* tg, Tensor<T>* tb) {
      out.push_back({l.path + "/" + name + "/g", tg, block});
      out.push_back({l.path + "/" + name + "/b", tb, block});
    };
    ln("ln_ffn1", &l.ln_ffn1_g, &l.ln_ffn1_b);
    ln("ln_attn", &l.ln_attn_g, &l.ln_attn_b);
    ln("ln_conv", &l.ln_conv_g, &l.ln_conv_b);
    ln("ln_ffn2", &l.ln_ffn2_g, &l.ln_ffn2_b);
    ln("ln_out", &l.ln_out_g, &l.ln_out_b);
  }
  return out;
}

#define SF_INSTANTIATE_MODELS(T)                                                          \
  template Val tanh_via_sigmoid<T>(Graph<T>&, Val);                                       \
  template Val linear_forward<T>(Graph<T>&, LinearMap<T>&, Val, const GateCtx<T>*);       \
  template CascadedEncoder<T> make_encoder<T>(const ConformerConfig&, RngKey);            \
  template CascadedEncoder<T> clone_encoder<T>(const CascadedEncoder<T>&);                \
  template CascadedEncoder<T> make_student<T>(const CascadedEncoder<T>&, PruneMethod);    \
  template GateLayout build_gate_layout<T>(const CascadedEncoder<T>&, PruneMethod);       \
  template void attach_gate_layout<T>(CascadedEncoder<T>&, PruneMethod);                  \
  template std::vector<PruneGroup> build_prune_groups<T>(const CascadedEncoder<T>&,       \
                                                         PruneMethod);                    \
  template EncoderTaps<T> encoder_forward<T>(Graph<T>&, CascadedEncoder<T>&, Val,         \
                                             const GateCtx<T>*);                          \
  template std::vector<NamedParam<T>> CascadedEncoder<T>::named_params()

SF_INSTANTIATE_MODELS(float);
SF_INSTANTIATE_MODELS(double);
#undef SF_INSTANTIATE_MODELS

}  // namespace slimformer
