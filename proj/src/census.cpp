#include "slimformer/census.hpp"

#include <fstream>

namespace slimformer {

namespace {

template <typename T>
int64_t map_flops(const LinearMap<T>& m, int64_t frames) {
  if (m.factorized) {
    return 2 * frames * m.lrf.rank * (m.lrf.in_dim + m.lrf.out_dim);
  }
  return 2 * frames * m.in_dim() * m.out_dim();
}

}  // namespace

template <typename T>
CensusReport census_and_flops(CascadedEncoder<T>& enc, int64_t reference_frames) {
  CensusReport r;
  r.reference_frames = reference_frames;
  for (const auto& p : enc.named_params()) {
    r.params_by_block[p.block] += p.tensor->size();
    r.total_params += p.tensor->size();
  }
  r.prunable_params = build_gate_layout(enc, enc.method).total_prunable_params();

  const int64_t t = reference_frames;
  r.flops_by_block["frontend"] = 2 * t * enc.cfg.feature_dim * enc.cfg.model_dim;
  for (const ConformerLayer<T>& l : enc.layers) {
    int64_t f = 0;
    f += map_flops(l.ffn1_in, t) + map_flops(l.ffn1_out, t);
    f += map_flops(l.ffn2_in, t) + map_flops(l.ffn2_out, t);
    f += map_flops(l.attn_q, t) + map_flops(l.attn_k, t) + map_flops(l.attn_v, t) +
         map_flops(l.attn_o, t);
    f += 4 * t * t * l.head_dim * l.n_heads;  // scores + context, 2 FLOPs per MAC
    f += map_flops(l.conv_pw1, t) + map_flops(l.conv_pw2, t);
    f += 2 * t * l.conv_channels * l.conv_kernel;  // depthwise
    r.flops_by_block[l.causal ? "causal" : "noncausal"] += f;
  }
  for (const auto& [block, f] : r.flops_by_block) r.encoder_flops += f;
  return r;
}

void write_group_census_csv(const GateLayout& layout, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  SF_CHECK(out.good(), ErrorCategory::kIo, "cannot write '", path, "'");
  out << "group_id,kind,owner,param_count\n";
  for (const PruneGroup& g : layout.groups()) {
    out << g.id << "," << group_kind_name(g.kind) << "," << g.owner << "," << g.param_count
        << "\n";
  }
}

template <typename T>
void add_asr_head_census(CensusReport& report, Predictor<T>& pred, Joint<T>& joint) {
  for (const auto& p : pred.named_params()) {
    report.params_by_block[p.block] += p.tensor->size();
    report.total_params += p.tensor->size();
  }
  for (const auto& p : joint.named_params()) {
    report.params_by_block[p.block] += p.tensor->size();
    report.total_params += p.tensor->size();
  }
}

template CensusReport census_and_flops<float>(CascadedEncoder<float>&, int64_t);
template CensusReport census_and_flops<double>(CascadedEncoder<double>&, int64_t);
template void add_asr_head_census<float>(CensusReport&, Predictor<float>&, Joint<float>&);
template void add_asr_head_census<double>(CensusReport&, Predictor<double>&, Joint<double>&);

}  // namespace slimformer
