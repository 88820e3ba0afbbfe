#ifndef SLIMFORMER_PIPELINE_HPP
#define SLIMFORMER_PIPELINE_HPP

#include <optional>
#include <string>

#include "slimformer/census.hpp"
#include "slimformer/data.hpp"
#include "slimformer/distill.hpp"
#include "slimformer/metrics.hpp"
#include "slimformer/model_io.hpp"
#include "slimformer/optimizer.hpp"
#include "slimformer/surgeon.hpp"

namespace slimformer {

// Typed view over the resolved JSON configuration.
struct RunSettings {
  uint64_t seed = 7;
  std::string precision = "f64";
  std::string backend = "auto";
  ConformerConfig model;
  DataConfig data;

  int64_t codebook_size = 32;
  int64_t proj_dim = 8;
  double mask_prob = 0.3;
  int64_t mask_span_min = 2;
  int64_t mask_span_max = 4;
  int64_t pretext_steps = 2000;
  int64_t pretext_batch = 4;

  double gate_beta = 2.0 / 3.0;
  double stretch_lo = -0.1;
  double stretch_hi = 1.1;
  double log_alpha_init = 2.5;
  double target_sparsity = 0.5;
  double schedule_fraction = 1.0 / 3.0;

  double weight_l1 = 0.5;
  double weight_cos = 0.5;
  double kd_weight = 1.0;
  std::string layer_rule = "block_ends";

  double lr = 1e-3;
  double gate_lr = 0.1;
  double multiplier_lr = 0.25;
  double multiplier_beta2 = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int64_t warmup_steps = 100;

  std::string method_name = "l0";
  bool use_kd = true;
  std::string scenario = "task_agnostic";
  std::string teacher_mode = "pt_encoder";
  int64_t steps_stage1 = 3000;
  int64_t steps_stage2 = 1500;
  int64_t steps_joint = 4000;
  int64_t steps_finetune = 3000;
  int64_t batch_size = 4;
  int64_t log_every = 25;
  int64_t max_symbols_per_frame = 10;
  int64_t reference_frames = 100;

  PruneMethod method() const { return method_name == "lrf" ? PruneMethod::kLrf : PruneMethod::kL0; }
  LayerRule distill_rule() const;
  static RunSettings from_json(const nlohmann::json& cfg);
};

// --- pretext (masked prediction against a random-projection quantizer) -----

template <typename T>
PretextModel<T> make_pretext_model(const RunSettings& s);

// Per-frame code ids; deterministic, computed on clean features.
template <typename T>
std::vector<int64_t> quantize_frames(const PretextModel<T>& m, const Tensor<T>& features);

std::vector<int64_t> sample_mask_spans(RngKey key, int64_t frames, double mask_prob,
                                       int64_t span_min, int64_t span_max);

template <typename T>
Val pretext_loss(Graph<T>& g, PretextModel<T>& m, const RunSettings& s,
                 const Tensor<T>& features, RngKey mask_key, const GateCtx<T>* gates = nullptr);

// --- training loops ---------------------------------------------------------

template <typename T>
struct Stage1Result {
  CascadedEncoder<T> student;
  GateSet<T> gates;
  LagrangianState<T> lagrangian;
  double achieved_expected_sparsity = 0;
  double final_task_loss = 0;
};

template <typename T>
struct TwoStageSummary {
  SurgeryStats surgery;
  double stage2_first_window = 0;
  double stage2_last_window = 0;
  double recorded_final_loss = 0;
  double achieved_exact_sparsity = 0;
};

template <typename T>
struct JointSummary {
  SurgeryStats surgery;
  GateLayout layout;
  double achieved_expected_sparsity = 0;
  double achieved_exact_sparsity = 0;
  double recorded_final_loss = 0;
  double ter_streaming = 0, ter_nonstreaming = 0;
  double untrained_ter_streaming = 0, untrained_ter_nonstreaming = 0;
};

struct EvalResult {
  double ter_streaming = 0;
  double ter_nonstreaming = 0;
  int64_t utterances = 0;
};

template <typename T>
PretextModel<T> pretrain_teacher(const RunSettings& s, const Corpus& corpus,
                                 MetricsWriter* metrics);

template <typename T>
AsrModel<T> finetune_teacher(const RunSettings& s, const PretextModel<T>& pretext,
                             const Corpus& corpus, MetricsWriter* metrics);

template <typename T>
Stage1Result<T> stage1_distill_prune(const RunSettings& s, PretextModel<T>& teacher,
                                     const Corpus& corpus, MetricsWriter* metrics);

template <typename T>
void stage2_refine(const RunSettings& s, CascadedEncoder<T>& teacher_enc,
                   CascadedEncoder<T>& student, const Corpus& corpus, MetricsWriter* metrics,
                   TwoStageSummary<T>* summary);

template <typename T>
JointSummary<T> joint_prune_finetune(const RunSettings& s, CascadedEncoder<T>& teacher_enc,
                                     const AsrModel<T>* teacher_asr, const Corpus& corpus,
                                     MetricsWriter* metrics, AsrModel<T>* compact_out);

template <typename T>
EvalResult evaluate_model(AsrModel<T>& m, const Corpus& corpus, int64_t max_symbols,
                          std::vector<std::vector<int>>* hyps_streaming = nullptr,
                          std::vector<std::vector<int>>* hyps_nonstreaming = nullptr);

// Deterministic eval-mode losses, used both to record checkpoint metadata and
// to verify that a reloaded checkpoint reproduces it.
template <typename T>
double distill_eval_loss(const RunSettings& s, CascadedEncoder<T>& teacher_enc,
                         CascadedEncoder<T>& student, const Corpus& corpus, int64_t step);
template <typename T>
double rnnt_eval_loss(const RunSettings& s, AsrModel<T>& m, const Corpus& corpus, int64_t step);

// --- full runs with artifacts ------------------------------------------------

void run_gen_data(const nlohmann::json& cfg, const std::string& out_dir, bool force);

template <typename T>
std::string run_pretrain_teacher(const nlohmann::json& cfg, const std::string& data_dir,
                                 const std::string& out_dir);
template <typename T>
std::string run_finetune_teacher(const nlohmann::json& cfg, const std::string& data_dir,
                                 const std::string& teacher_ckpt, const std::string& out_dir);
template <typename T>
void run_distill_prune(const nlohmann::json& cfg, const std::string& data_dir,
                       const std::string& teacher_ckpt, const std::string& out_dir);
template <typename T>
void run_joint_prune(const nlohmann::json& cfg, const std::string& data_dir,
                     const std::string& teacher_ckpt, const std::string& out_dir);
template <typename T>
EvalResult run_evaluate(const nlohmann::json& cfg, const std::string& data_dir,
                        const std::string& ckpt, const std::string& split,
                        const std::string& out_dir);

// Recomputes the loss recorded in a checkpoint's metadata from the artifacts
// on disk; the pipelines guarantee it matches within 1e-8.
template <typename T>
double reproduce_recorded_loss(const std::string& ckpt_path, const std::string& data_dir);

// Merges per-run report.json files into a retention table (rows causal /
// non-causal, one column per method x scenario).
void write_retention_table(const std::vector<std::string>& report_paths,
                           const std::string& csv_path);

}  // namespace slimformer

#endif  // SLIMFORMER_PIPELINE_HPP
