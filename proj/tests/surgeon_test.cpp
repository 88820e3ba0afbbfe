#include <cmath>

#include "doctest.h"
#include "slimformer/census.hpp"
#include "slimformer/surgeon.hpp"

using namespace slimformer;

namespace {

RngKey test_key(uint64_t stream = 0) { return RngKey(808, stream); }

ConformerConfig tiny_cfg() {
  ConformerConfig cfg;
  cfg.causal_layers = 2;
  cfg.noncausal_layers = 1;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.conv_kernel = 3;
  cfg.vocab_size = 5;
  cfg.feature_dim = 6;
  return cfg;
}

GateSet<double> random_gates(int64_t n, uint64_t stream) {
  GateSet<double> gates(n, 0.0, 2.0 / 3.0, -0.1, 1.1);
  RngKey key = test_key(stream);
  for (int64_t i = 0; i < n; ++i) {
    // Spread over closed, fractional and saturated-open regions.
    gates.log_alpha.at(i) = -6.0 + 12.0 * key.uniform_open(static_cast<uint64_t>(i));
  }
  return gates;
}

}  // namespace

TEST_CASE("surgeon equivalence over random gate snapshots, both methods") {
  auto cfg = tiny_cfg();
  auto teacher = make_encoder<double>(cfg, test_key(1));

  for (PruneMethod method : {PruneMethod::kL0, PruneMethod::kLrf}) {
    for (uint64_t snap = 0; snap < 10; ++snap) {
      auto student = make_student(teacher, method);
      auto gates = random_gates(student.gate_layout.total, 100 + snap);

      SurgeryStats stats;
      auto compact = surgeon(student, gates, &stats);
      CHECK(stats.prunable_params_before - stats.prunable_params_after ==
            stats.closed_param_count);

      double worst = 0;
      for (uint64_t trial = 0; trial < 5; ++trial) {
        Tensor<double> x =
            Tensor<double>::randn({6, cfg.feature_dim}, test_key(1000 + snap * 10 + trial));
        for (bool noncausal : {false, true}) {
          Tensor<double> masked = masked_encoder_apply(student, gates, x, noncausal, test_key(3));
          Tensor<double> pruned = encoder_apply(compact, x, noncausal, test_key(3));
          worst = std::max(worst, max_abs_diff(masked, pruned));
        }
      }
      CAPTURE(static_cast<int>(method));
      CAPTURE(snap);
      CHECK(worst <= 1e-10);
    }
  }
}

TEST_CASE("no closed gates leaves the census unchanged") {
  auto cfg = tiny_cfg();
  auto teacher = make_encoder<double>(cfg, test_key(5));
  auto student = make_student(teacher, PruneMethod::kL0);
  GateSet<double> open(student.gate_layout.total, 8.0, 2.0 / 3.0, -0.1, 1.1);
  SurgeryStats stats;
  auto compact = surgeon(student, open, &stats);
  CHECK(stats.groups_closed == 0);
  CHECK(stats.prunable_params_before == stats.prunable_params_after);

  Tensor<double> x = Tensor<double>::randn({4, cfg.feature_dim}, test_key(6));
  CHECK(max_abs_diff(encoder_apply(student, x, true, test_key(7)),
                     encoder_apply(compact, x, true, test_key(7))) <= 1e-12);
}

TEST_CASE("closing one ffn unit removes exactly its param_count") {
  auto cfg = tiny_cfg();
  auto teacher = make_encoder<double>(cfg, test_key(8));
  auto student = make_student(teacher, PruneMethod::kL0);
  GateSet<double> gates(student.gate_layout.total, 8.0, 2.0 / 3.0, -0.1, 1.1);

  // First site is layer0/ffn1; close its unit 3.
  const GateSite& site = student.gate_layout.sites[0];
  CHECK(site.kind == GroupKind::kFfnHiddenUnit);
  gates.log_alpha.at(site.offset + 3) = -20.0;

  SurgeryStats stats;
  auto compact = surgeon(student, gates, &stats);
  CHECK(stats.groups_closed == 1);
  CHECK(stats.closed_param_count == site.params_per_group);
  CHECK(stats.prunable_params_before - stats.prunable_params_after == site.params_per_group);
  CHECK(compact.layers[0].ffn1_hidden == student.layers[0].ffn1_hidden - 1);
}

TEST_CASE("per-head pruning: masked equals pruned after zeroing one head") {
  auto cfg = tiny_cfg();
  auto teacher = make_encoder<double>(cfg, test_key(9));
  auto student = make_student(teacher, PruneMethod::kL0);
  GateSet<double> gates(student.gate_layout.total, 8.0, 2.0 / 3.0, -0.1, 1.1);
  for (const GateSite& site : student.gate_layout.sites) {
    if (site.kind == GroupKind::kAttentionHead) {
      gates.log_alpha.at(site.offset) = -20.0;  // close head 0 of this layer
    }
  }
  auto compact = surgeon(student, gates, nullptr);
  CHECK(compact.layers[0].n_heads == 1);

  Tensor<double> x = Tensor<double>::randn({5, cfg.feature_dim}, test_key(10));
  for (bool noncausal : {false, true}) {
    Tensor<double> masked = masked_encoder_apply(student, gates, x, noncausal, test_key(11));
    Tensor<double> pruned = encoder_apply(compact, x, noncausal, test_key(11));
    CHECK(max_abs_diff(masked, pruned) <= 1e-10);
  }
}

TEST_CASE("an entirely closed site degenerates to a bias-only block") {
  auto cfg = tiny_cfg();
  auto teacher = make_encoder<double>(cfg, test_key(12));
  auto student = make_student(teacher, PruneMethod::kL0);
  GateSet<double> gates(student.gate_layout.total, 8.0, 2.0 / 3.0, -0.1, 1.1);
  for (const GateSite& site : student.gate_layout.sites) {
    if (site.path == "encoder/causal/layer0/heads" ||
        site.path == "encoder/causal/layer0/conv" ||
        site.path == "encoder/causal/layer0/ffn1") {
      for (int64_t i = 0; i < site.count; ++i) gates.log_alpha.at(site.offset + i) = -20.0;
    }
  }
  auto compact = surgeon(student, gates, nullptr);
  CHECK(compact.layers[0].n_heads == 0);
  CHECK(compact.layers[0].conv_channels == 0);
  CHECK(compact.layers[0].ffn1_hidden == 0);

  Tensor<double> x = Tensor<double>::randn({4, cfg.feature_dim}, test_key(13));
  Tensor<double> masked = masked_encoder_apply(student, gates, x, true, test_key(14));
  Tensor<double> pruned = encoder_apply(compact, x, true, test_key(14));
  CHECK(pruned.all_finite());
  CHECK(max_abs_diff(masked, pruned) <= 1e-10);
}

TEST_CASE("census and flops arithmetic") {
  ConformerConfig cfg = tiny_cfg();
  auto enc = make_encoder<double>(cfg, test_key(15));
  auto report = census_and_flops(enc, 1);

  // A dense in x out map costs 2*in*out FLOPs per frame.
  // frontend at one frame:
  CHECK(report.flops_by_block["frontend"] == 2 * cfg.feature_dim * cfg.model_dim);

  // Parameter blocks cover everything exactly once.
  int64_t sum = 0;
  for (const auto& [block, n] : report.params_by_block) sum += n;
  CHECK(sum == report.total_params);
  CHECK(report.params_by_block.count("causal") == 1);
  CHECK(report.params_by_block.count("noncausal") == 1);

  // 1024x1024 dense at one frame: 2.097 MFLOPs.
  CHECK(2 * 1024 * 1024 == 2097152);
}
