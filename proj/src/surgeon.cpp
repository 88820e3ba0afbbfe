#include "slimformer/surgeon.hpp"

namespace slimformer {

namespace {

template <typename T>
std::vector<int64_t> kept_indices(const Tensor<T>& z, int64_t offset, int64_t count) {
  std::vector<int64_t> keep;
  for (int64_t i = 0; i < count; ++i) {
    if (z.at(offset + i) > T(0)) keep.push_back(i);
  }
  return keep;
}

template <typename T>
Tensor<T> select_cols(const Tensor<T>& w, const std::vector<int64_t>& cols) {
  Tensor<T> out({w.dim(0), static_cast<int64_t>(cols.size())});
  for (int64_t i = 0; i < w.dim(0); ++i) {
    for (size_t j = 0; j < cols.size(); ++j) out.at(i, static_cast<int64_t>(j)) = w.at(i, cols[j]);
  }
  out.requires_grad = w.requires_grad;
  return out;
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& w, const std::vector<int64_t>& rows,
                      const std::vector<T>* row_scale = nullptr) {
  Tensor<T> out({static_cast<int64_t>(rows.size()), w.dim(1)});
  for (size_t i = 0; i < rows.size(); ++i) {
    const T s = row_scale ? (*row_scale)[i] : T(1);
    for (int64_t j = 0; j < w.dim(1); ++j) {
      out.at(static_cast<int64_t>(i), j) = row_scale ? w.at(rows[i], j) * s : w.at(rows[i], j);
    }
  }
  out.requires_grad = w.requires_grad;
  return out;
}

template <typename T>
Tensor<T> select_entries(const Tensor<T>& v, const std::vector<int64_t>& idx) {
  Tensor<T> out({static_cast<int64_t>(idx.size())});
  for (size_t i = 0; i < idx.size(); ++i) out.at(static_cast<int64_t>(i)) = v.at(idx[i]);
  out.requires_grad = v.requires_grad;
  return out;
}

template <typename T>
std::vector<T> gate_values_at(const Tensor<T>& z, int64_t offset,
                              const std::vector<int64_t>& keep) {
  std::vector<T> out;
  out.reserve(keep.size());
  for (int64_t k : keep) out.push_back(z.at(offset + k));
  return out;
}

// FFN site: drop closed hidden units; the gate sits after the activation, so
// fractional values fold into the rows of the output map.
template <typename T>
void prune_ffn(LinearMap<T>& w_in, LinearMap<T>& w_out, int64_t& hidden, int64_t offset,
               const Tensor<T>& z, const std::string& site) {
  SF_CHECK_CONTRACT(!w_in.factorized, "structural surgery on a factorized map at ", site);
  auto keep = kept_indices(z, offset, hidden);
  auto scales = gate_values_at(z, offset, keep);
  w_in.w = select_cols(w_in.w, keep);
  w_in.bias = select_entries(w_in.bias, keep);
  w_out.w = select_rows(w_out.w, keep, &scales);
  hidden = static_cast<int64_t>(keep.size());
}

template <typename T>
void prune_heads(ConformerLayer<T>& l, const Tensor<T>& z) {
  auto keep = kept_indices(z, l.heads_gate_offset, l.n_heads);
  auto head_scales = gate_values_at(z, l.heads_gate_offset, keep);
  std::vector<int64_t> cols;
  std::vector<T> row_scales;
  for (size_t hi = 0; hi < keep.size(); ++hi) {
    for (int64_t dd = 0; dd < l.head_dim; ++dd) {
      cols.push_back(keep[hi] * l.head_dim + dd);
      row_scales.push_back(head_scales[hi]);
    }
  }
  for (LinearMap<T>* m : {&l.attn_q, &l.attn_k, &l.attn_v}) {
    m->w = select_cols(m->w, cols);
    m->bias = select_entries(m->bias, cols);
  }
  l.attn_o.w = select_rows(l.attn_o.w, cols, &row_scales);
  l.n_heads = static_cast<int64_t>(keep.size());
}

// Conv site: channel c owns pw1 output columns c and C+c (GLU value/gate
// halves), the depthwise row c, and pw2 row c. The group gate multiplies the
// activation entering pw2, so fractions fold into pw2 rows.
template <typename T>
void prune_conv(ConformerLayer<T>& l, const Tensor<T>& z) {
  const int64_t c_before = l.conv_channels;
  auto keep = kept_indices(z, l.conv_gate_offset, c_before);
  auto scales = gate_values_at(z, l.conv_gate_offset, keep);

  std::vector<int64_t> pw1_cols;
  for (int64_t c : keep) pw1_cols.push_back(c);
  for (int64_t c : keep) pw1_cols.push_back(c_before + c);
  l.conv_pw1.w = select_cols(l.conv_pw1.w, pw1_cols);
  l.conv_pw1.bias = select_entries(l.conv_pw1.bias, pw1_cols);
  l.conv_dw = select_rows(l.conv_dw, keep);
  l.conv_dw_bias = select_entries(l.conv_dw_bias, keep);
  l.conv_pw2.w = select_rows(l.conv_pw2.w, keep, &scales);
  l.conv_channels = static_cast<int64_t>(keep.size());
}

template <typename T>
void prune_map_ranks(LinearMap<T>& m, const Tensor<T>& z, const std::string& site) {
  SF_CHECK_CONTRACT(m.factorized, "rank surgery on a dense map at ", site);
  Tensor<T> slice({m.lrf.rank});
  for (int64_t k = 0; k < m.lrf.rank; ++k) slice.at(k) = z.at(m.gate_offset + k);
  m.lrf = prune_ranks(m.lrf, slice);
  m.gate_offset = -1;
}

}  // namespace

template <typename T>
CascadedEncoder<T> surgeon(const CascadedEncoder<T>& enc, const GateSet<T>& gates,
                           SurgeryStats* stats) {
  SF_CHECK_CONTRACT(enc.gated(), "surgeon needs a gated model");
  SF_CHECK_CONTRACT(gates.size() == enc.gate_layout.total, "gate count ", gates.size(),
                    " does not match layout total ", enc.gate_layout.total);
  const Tensor<T> z = eval_gates(gates);

  SurgeryStats st;
  st.groups_total = enc.gate_layout.total;
  st.prunable_params_before = enc.gate_layout.total_prunable_params();
  for (const GateSite& site : enc.gate_layout.sites) {
    for (int64_t i = 0; i < site.count; ++i) {
      if (z.at(site.offset + i) == T(0)) {
        ++st.groups_closed;
        st.closed_param_count += site.params_per_group;
      }
    }
  }

  CascadedEncoder<T> out = clone_encoder(enc);
  for (ConformerLayer<T>& l : out.layers) {
    if (out.method == PruneMethod::kL0) {
      prune_ffn(l.ffn1_in, l.ffn1_out, l.ffn1_hidden, l.ffn1_gate_offset, z, l.path + "/ffn1");
      prune_heads(l, z);
      prune_conv(l, z);
      prune_ffn(l.ffn2_in, l.ffn2_out, l.ffn2_hidden, l.ffn2_gate_offset, z, l.path + "/ffn2");
    } else {
      prune_map_ranks(l.ffn1_in, z, l.path + "/ffn1_in");
      prune_map_ranks(l.ffn1_out, z, l.path + "/ffn1_out");
      prune_map_ranks(l.attn_q, z, l.path + "/q");
      prune_map_ranks(l.attn_k, z, l.path + "/k");
      prune_map_ranks(l.attn_v, z, l.path + "/v");
      prune_map_ranks(l.attn_o, z, l.path + "/o");
      prune_map_ranks(l.conv_pw1, z, l.path + "/pw1");
      prune_map_ranks(l.conv_pw2, z, l.path + "/pw2");
      prune_map_ranks(l.ffn2_in, z, l.path + "/ffn2_in");
      prune_map_ranks(l.ffn2_out, z, l.path + "/ffn2_out");
    }
    l.heads_gate_offset = l.ffn1_gate_offset = l.ffn2_gate_offset = l.conv_gate_offset = -1;
  }
  out.gate_layout = GateLayout{};

  st.prunable_params_after = build_gate_layout(out, out.method).total_prunable_params();
  SF_CHECK(st.prunable_params_before - st.prunable_params_after == st.closed_param_count,
           ErrorCategory::kContract,
           "surgery bookkeeping mismatch: removed ",
           st.prunable_params_before - st.prunable_params_after, " prunable params but closed "
           "groups account for ", st.closed_param_count);
  if (stats != nullptr) *stats = st;
  return out;
}

template <typename T>
Tensor<T> masked_encoder_apply(CascadedEncoder<T>& enc, const GateSet<T>& gates,
                               const Tensor<T>& x, bool noncausal_tap, RngKey key) {
  Graph<T> g(key);
  GateCtx<T> ctx;
  ctx.z = g.constant(eval_gates(gates));
  ctx.layout = &enc.gate_layout;
  auto taps = encoder_forward(g, enc, g.constant(x), &ctx);
  return g.value(noncausal_tap ? taps.noncausal_out : taps.causal_out);
}

template <typename T>
Tensor<T> encoder_apply(CascadedEncoder<T>& enc, const Tensor<T>& x, bool noncausal_tap,
                        RngKey key) {
  Graph<T> g(key);
  auto taps = encoder_forward(g, enc, g.constant(x), static_cast<const GateCtx<T>*>(nullptr));
  return g.value(noncausal_tap ? taps.noncausal_out : taps.causal_out);
}

#define SF_INSTANTIATE_SURGEON(T)                                                         \
  template CascadedEncoder<T> surgeon<T>(const CascadedEncoder<T>&, const GateSet<T>&,    \
                                         SurgeryStats*);                                  \
  template Tensor<T> masked_encoder_apply<T>(CascadedEncoder<T>&, const GateSet<T>&,      \
                                             const Tensor<T>&, bool, RngKey);             \
  template Tensor<T> encoder_apply<T>(CascadedEncoder<T>&, const Tensor<T>&, bool, RngKey)

SF_INSTANTIATE_SURGEON(float);
SF_INSTANTIATE_SURGEON(double);
#undef SF_INSTANTIATE_SURGEON

}  // namespace slimformer
