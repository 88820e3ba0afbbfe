#include "slimformer/pipeline.hpp"

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "slimformer/config.hpp"
#include "slimformer/decode.hpp"
#include "slimformer/kernels.hpp"

namespace slimformer {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

LayerRule RunSettings::distill_rule() const {
  LayerRule rule;
  if (layer_rule.rfind("stride:", 0) == 0) {
    rule.kind = LayerRule::Kind::kStride;
    rule.stride = std::stoll(layer_rule.substr(7));
  } else if (layer_rule == "block_ends") {
    rule.kind = LayerRule::Kind::kBlockEnds;
    rule.block_sizes = {model.causal_layers, model.noncausal_layers};
  } else {
    fail(ErrorCategory::kConfig, str("unknown distill.layer_rule '", layer_rule, "'"));
  }
  return rule;
}

RunSettings RunSettings::from_json(const json& cfg) {
  RunSettings s;
  s.seed = cfg.at("seed").get<uint64_t>();
  s.precision = cfg.at("precision").get<std::string>();
  SF_CHECK(s.precision == "f64" || s.precision == "f32", ErrorCategory::kConfig,
           "precision must be f64 or f32");
  s.backend = cfg.at("compute").at("backend").get<std::string>();

  const json& m = cfg.at("model");
  s.model.causal_layers = m.at("causal_layers").get<int64_t>();
  s.model.noncausal_layers = m.at("noncausal_layers").get<int64_t>();
  s.model.model_dim = m.at("model_dim").get<int64_t>();
  s.model.heads = m.at("heads").get<int64_t>();
  s.model.ffn_mult = m.at("ffn_mult").get<int64_t>();
  s.model.conv_kernel = m.at("conv_kernel").get<int64_t>();
  s.model.predictor_dim = m.at("predictor_dim").get<int64_t>();
  s.model.joint_dim = m.at("joint_dim").get<int64_t>();
  s.model.max_positions = m.at("max_positions").get<int64_t>();

  const json& d = cfg.at("data");
  s.data.feature_dim = d.at("feature_dim").get<int64_t>();
  s.data.vocab_size = d.at("vocab_size").get<int64_t>();
  s.data.train_utts = d.at("train_utts").get<int64_t>();
  s.data.dev_utts = d.at("dev_utts").get<int64_t>();
  s.data.test_utts = d.at("test_utts").get<int64_t>();
  s.data.min_labels = d.at("min_labels").get<int64_t>();
  s.data.max_labels = d.at("max_labels").get<int64_t>();
  s.data.frames_per_label_min = d.at("frames_per_label_min").get<int64_t>();
  s.data.frames_per_label_max = d.at("frames_per_label_max").get<int64_t>();
  s.data.noise_std = d.at("noise_std").get<double>();
  s.data.seed = s.seed;
  s.model.feature_dim = s.data.feature_dim;
  s.model.vocab_size = s.data.vocab_size;

  const json& p = cfg.at("pretext");
  s.codebook_size = p.at("codebook_size").get<int64_t>();
  s.proj_dim = p.at("proj_dim").get<int64_t>();
  s.mask_prob = p.at("mask_prob").get<double>();
  s.mask_span_min = p.at("mask_span_min").get<int64_t>();
  s.mask_span_max = p.at("mask_span_max").get<int64_t>();
  s.pretext_steps = p.at("steps").get<int64_t>();
  s.pretext_batch = p.at("batch_size").get<int64_t>();

  const json& gje = cfg.at("gates");
  s.gate_beta = gje.at("beta").get<double>();
  s.stretch_lo = gje.at("stretch_lo").get<double>();
  s.stretch_hi = gje.at("stretch_hi").get<double>();
  s.log_alpha_init = gje.at("log_alpha_init").get<double>();
  s.target_sparsity = gje.at("target_sparsity").get<double>();
  s.schedule_fraction = gje.at("schedule_fraction").get<double>();
  SF_CHECK(s.target_sparsity > 0.0 && s.target_sparsity < 1.0, ErrorCategory::kConfig,
           "target_sparsity must lie in (0, 1)");

  const json& di = cfg.at("distill");
  s.weight_l1 = di.at("weight_l1").get<double>();
  s.weight_cos = di.at("weight_cos").get<double>();
  s.kd_weight = di.at("kd_weight").get<double>();
  s.layer_rule = di.at("layer_rule").get<std::string>();

  const json& o = cfg.at("optimizer");
  s.lr = o.at("lr").get<double>();
  s.gate_lr = o.at("gate_lr").get<double>();
  s.multiplier_lr = o.at("multiplier_lr").get<double>();
  s.multiplier_beta2 = o.at("multiplier_beta2").get<double>();
  s.weight_decay = o.at("weight_decay").get<double>();
  s.beta1 = o.at("beta1").get<double>();
  s.beta2 = o.at("beta2").get<double>();
  s.adam_eps = o.at("eps").get<double>();
  s.warmup_steps = o.at("warmup_steps").get<int64_t>();

  const json& pl = cfg.at("pipeline");
  s.method_name = pl.at("method").get<std::string>();
  SF_CHECK(s.method_name == "l0" || s.method_name == "lrf", ErrorCategory::kConfig,
           "pipeline.method must be l0 or lrf");
  s.use_kd = pl.at("use_kd").get<bool>();
  s.scenario = pl.at("scenario").get<std::string>();
  s.teacher_mode = pl.at("teacher_mode").get<std::string>();
  s.steps_stage1 = pl.at("steps_stage1").get<int64_t>();
  s.steps_stage2 = pl.at("steps_stage2").get<int64_t>();
  s.steps_joint = pl.at("steps_joint").get<int64_t>();
  s.steps_finetune = pl.at("steps_finetune").get<int64_t>();
  s.batch_size = pl.at("batch_size").get<int64_t>();
  s.log_every = pl.at("log_every").get<int64_t>();

  s.max_symbols_per_frame = cfg.at("decode").at("max_symbols_per_frame").get<int64_t>();
  s.reference_frames = cfg.at("report").at("reference_frames").get<int64_t>();
  s.model.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> to_precision(const Tensor<double>& a) {
  Tensor<T> out(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out.at(i) = static_cast<T>(a.at(i));
  return out;
}

template <typename T>
void freeze_params(const std::vector<NamedParam<T>>& params) {
  for (const auto& p : params) p.tensor->requires_grad = false;
}

template <typename T>
void thaw_params(const std::vector<NamedParam<T>>& params) {
  for (const auto& p : params) p.tensor->requires_grad = true;
}

template <typename T>
ParamGroup<T> main_group(std::vector<NamedParam<T>> params, const RunSettings& s) {
  ParamGroup<T> g;
  g.base_lr = s.lr;
  g.weight_decay = s.weight_decay;
  for (auto& p : params) g.params.push_back({p.name, p.tensor});
  return g;
}

AdamConfig adam_config(const RunSettings& s) {
  AdamConfig c;
  c.beta1 = s.beta1;
  c.beta2 = s.beta2;
  c.eps = s.adam_eps;
  c.warmup_steps = s.warmup_steps;
  return c;
}

RngKey run_key(const RunSettings& s, const std::string& phase, int64_t step) {
  return RngKey(s.seed, 0).derive(phase).derive(static_cast<uint64_t>(step));
}

template <typename T>
double expected_sparsity_now(const GateSet<T>& gates, const std::vector<int64_t>& counts) {
  const Tensor<T> p = prob_nonzero_values(gates);
  double num = 0, den = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    num += static_cast<double>(p.at(static_cast<int64_t>(i))) * static_cast<double>(counts[i]);
    den += static_cast<double>(counts[i]);
  }
  return 1.0 - num / den;
}

void ensure_dir(const std::string& path) { fs::create_directories(path); }

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&tt));
  return buf;
}

// Wall-clock and host facts live here, never in metrics.jsonl.
void write_run_meta(const std::string& out_dir, const std::string& started,
                    const json& extra = json::object()) {
  json meta = extra;
  meta["started_at"] = started;
  meta["finished_at"] = now_iso8601();
  char host[256] = {0};
  if (gethostname(host, sizeof(host) - 1) == 0) meta["host"] = host;
  write_json_file(meta, out_dir + "/run_meta.json");
}

double mflops(int64_t flops) { return static_cast<double>(flops) / 1e6; }

}  // namespace

// ---------------------------------------------------------------------------
// Pretext task
// ---------------------------------------------------------------------------

template <typename T>
PretextModel<T> make_pretext_model(const RunSettings& s) {
  PretextModel<T> m;
  m.encoder = make_encoder<T>(s.model, RngKey(s.seed, 0).derive("teacher_init"));
  m.head_w = Tensor<T>::randn({s.model.model_dim, s.codebook_size},
                              RngKey(s.seed, 0).derive("pretext_head"),
                              1.0 / std::sqrt(static_cast<double>(s.model.model_dim)));
  m.head_b = Tensor<T>::zeros({s.codebook_size});
  m.head_w.requires_grad = m.head_b.requires_grad = true;

  // Frozen quantizer; retry the codebook draw if any two entries collide.
  m.quant_proj = Tensor<T>::randn({s.data.feature_dim, s.proj_dim},
                                  RngKey(s.seed, 0).derive("quant_proj"));
  for (uint64_t attempt = 0;; ++attempt) {
    m.codebook = Tensor<T>::randn({s.codebook_size, s.proj_dim},
                                  RngKey(s.seed, 0).derive("codebook").derive(attempt));
    bool degenerate = false;
    for (int64_t i = 0; i < s.codebook_size && !degenerate; ++i) {
      for (int64_t j = i + 1; j < s.codebook_size && !degenerate; ++j) {
        bool same = true;
        for (int64_t k = 0; k < s.proj_dim; ++k) {
          if (m.codebook.at(i, k) != m.codebook.at(j, k)) {
            same = false;
            break;
          }
        }
        degenerate = same;
      }
    }
    if (!degenerate) break;
  }
  return m;
}

template <typename T>
std::vector<int64_t> quantize_frames(const PretextModel<T>& m, const Tensor<T>& features) {
  const int64_t frames = features.dim(0);
  const int64_t proj_dim = m.quant_proj.dim(1);
  const int64_t cb = m.codebook.dim(0);

  // Normalized projections against normalized codebook entries.
  std::vector<double> cb_norm(static_cast<size_t>(cb * proj_dim));
  for (int64_t c = 0; c < cb; ++c) {
    double n2 = 0;
    for (int64_t k = 0; k < proj_dim; ++k) {
      n2 += static_cast<double>(m.codebook.at(c, k)) * static_cast<double>(m.codebook.at(c, k));
    }
    const double inv = n2 > 0 ? 1.0 / std::sqrt(n2) : 0.0;
    for (int64_t k = 0; k < proj_dim; ++k) {
      cb_norm[static_cast<size_t>(c * proj_dim + k)] =
          static_cast<double>(m.codebook.at(c, k)) * inv;
    }
  }

  std::vector<int64_t> codes(static_cast<size_t>(frames));
  std::vector<double> proj(static_cast<size_t>(proj_dim));
  for (int64_t t = 0; t < frames; ++t) {
    double n2 = 0;
    for (int64_t k = 0; k < proj_dim; ++k) {
      double acc = 0;
      for (int64_t f = 0; f < features.dim(1); ++f) {
        acc += static_cast<double>(features.at(t, f)) * static_cast<double>(m.quant_proj.at(f, k));
      }
      proj[static_cast<size_t>(k)] = acc;
      n2 += acc * acc;
    }
    const double inv = n2 > 0 ? 1.0 / std::sqrt(n2) : 0.0;
    int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < cb; ++c) {
      double dist = 0;
      for (int64_t k = 0; k < proj_dim; ++k) {
        const double d = proj[static_cast<size_t>(k)] * inv -
                         cb_norm[static_cast<size_t>(c * proj_dim + k)];
        dist += d * d;
      }
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    codes[static_cast<size_t>(t)] = best;
  }
  return codes;
}

std::vector<int64_t> sample_mask_spans(RngKey key, int64_t frames, double mask_prob,
                                       int64_t span_min, int64_t span_max) {
  SF_CHECK_CONTRACT(mask_prob > 0.0, "masked prediction needs mask_prob > 0 (at least one "
                                     "masked position)");
  SF_CHECK_CONTRACT(span_min >= 1 && span_max >= span_min, "bad mask span range");
  const double mean_span = 0.5 * static_cast<double>(span_min + span_max);
  const double start_prob = std::min(1.0, mask_prob / mean_span);
  std::set<int64_t> masked;
  uint64_t ctr = 0;
  for (int64_t t = 0; t < frames;) {
    if (key.uniform_open(ctr++) < start_prob) {
      const int64_t len = span_min + static_cast<int64_t>(key.uniform_int(
                                         1000 + ctr++, static_cast<uint64_t>(span_max - span_min + 1)));
      for (int64_t i = t; i < std::min(frames, t + len); ++i) masked.insert(i);
      t += len;
    } else {
      ++t;
    }
  }
  if (masked.empty()) {
    const int64_t start = static_cast<int64_t>(key.uniform_int(7777, static_cast<uint64_t>(frames)));
    for (int64_t i = start; i < std::min(frames, start + span_min); ++i) masked.insert(i);
  }
  return std::vector<int64_t>(masked.begin(), masked.end());
}

template <typename T>
Val pretext_loss(Graph<T>& g, PretextModel<T>& m, const RunSettings& s,
                 const Tensor<T>& features, RngKey mask_key, const GateCtx<T>* gates) {
  const int64_t frames = features.dim(0);
  const std::vector<int64_t> codes = quantize_frames(m, features);
  const std::vector<int64_t> masked = sample_mask_spans(
      mask_key.derive("spans"), frames, s.mask_prob, s.mask_span_min, s.mask_span_max);

  // Masked frames are replaced by low-variance noise; targets come from the
  // clean frames.
  Tensor<T> x = features;
  RngKey noise = mask_key.derive("noise");
  uint64_t ctr = 0;
  for (int64_t t : masked) {
    for (int64_t f = 0; f < features.dim(1); ++f) {
      x.at(t, f) = static_cast<T>(0.1 * noise.normal(ctr++));
    }
  }

  auto taps = encoder_forward(g, m.encoder, g.constant(std::move(x)), gates);
  Val logits = g.add(g.matmul(taps.noncausal_out, g.leaf(&m.head_w)), g.leaf(&m.head_b));
  Val log_probs = g.log(g.softmax(logits, -1));
  Val rows = g.gather_rows(log_probs, masked);
  std::vector<int64_t> targets;
  targets.reserve(masked.size());
  for (int64_t t : masked) targets.push_back(codes[static_cast<size_t>(t)]);
  Val picked = g.col_pick(rows, targets);
  return g.scale(g.mean(picked), T(-1));
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

uint64_t phase_seed(const RunSettings& s, const std::string& phase) {
  return mix64(s.seed ^ hash_string(phase));
}

template <typename T>
Val batch_mean(Graph<T>& g, const std::vector<Val>& losses) {
  Val acc = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) acc = g.add(acc, losses[i]);
  return g.scale(acc, static_cast<T>(1.0 / static_cast<double>(losses.size())));
}

template <typename T>
double scalar_value(Graph<T>& g, Val v) {
  return static_cast<double>(g.value(v).at(0));
}

// Average transducer loss over the two encoder taps, so both the streaming
// and the non-streaming decode paths are trained.
template <typename T>
Val two_tap_rnnt(Graph<T>& g, AsrModel<T>& m, const EncoderTaps<T>& taps,
                 const std::vector<int>& labels) {
  Val c = transducer_loss(g, m.joint, m.predictor, taps.causal_out, labels);
  Val nc = transducer_loss(g, m.joint, m.predictor, taps.noncausal_out, labels);
  return g.scale(g.add(c, nc), T(0.5));
}

}  // namespace

template <typename T>
PretextModel<T> pretrain_teacher(const RunSettings& s, const Corpus& corpus,
                                 MetricsWriter* metrics) {
  SF_CHECK_CONTRACT(!corpus.utts.empty(), "pretraining needs a non-empty corpus");
  PretextModel<T> m = make_pretext_model<T>(s);
  AdamW<T> opt({main_group(m.trainable_params(), s)}, adam_config(s));

  for (int64_t step = 0; step < s.pretext_steps; ++step) {
    opt.zero_grad();
    Graph<T> g(run_key(s, "pretrain", step));
    const auto batch = batch_indices(phase_seed(s, "pretrain"), step, s.pretext_batch,
                                     static_cast<int64_t>(corpus.utts.size()));
    std::vector<Val> losses;
    for (size_t bi = 0; bi < batch.size(); ++bi) {
      const Tensor<T> feats = to_precision<T>(corpus.utts[static_cast<size_t>(batch[bi])].features);
      losses.push_back(pretext_loss(g, m, s, feats,
                                    run_key(s, "pretrain_mask", step).derive(bi)));
    }
    Val loss = batch_mean(g, losses);
    g.backward(loss);
    opt.step();
    if (metrics != nullptr && (step % s.log_every == 0 || step + 1 == s.pretext_steps)) {
      metrics->log(ordered_json{{"phase", "pretrain"},
                                {"step", step},
                                {"loss", scalar_value(g, loss)},
                                {"lr", opt.last_lr()}});
    }
  }
  return m;
}

template <typename T>
AsrModel<T> finetune_teacher(const RunSettings& s, const PretextModel<T>& pretext,
                             const Corpus& corpus, MetricsWriter* metrics) {
  AsrModel<T> m;
  m.encoder = clone_encoder(pretext.encoder);
  thaw_params(m.encoder.named_params());
  m.predictor = make_predictor<T>(s.model, RngKey(s.seed, 0).derive("teacher_asr"));
  m.joint = make_joint<T>(s.model, RngKey(s.seed, 0).derive("teacher_asr"));
  AdamW<T> opt({main_group(m.trainable_params(), s)}, adam_config(s));

  for (int64_t step = 0; step < s.steps_finetune; ++step) {
    opt.zero_grad();
    Graph<T> g(run_key(s, "finetune", step));
    const auto batch = batch_indices(phase_seed(s, "finetune"), step, s.batch_size,
                                     static_cast<int64_t>(corpus.utts.size()));
    std::vector<Val> losses;
    for (int64_t idx : batch) {
      const Utterance& utt = corpus.utts[static_cast<size_t>(idx)];
      Val x = g.constant(to_precision<T>(utt.features));
      auto taps = encoder_forward(g, m.encoder, x, static_cast<const GateCtx<T>*>(nullptr));
      losses.push_back(two_tap_rnnt(g, m, taps, utt.labels));
    }
    Val loss = batch_mean(g, losses);
    g.backward(loss);
    opt.step();
    if (metrics != nullptr && (step % s.log_every == 0 || step + 1 == s.steps_finetune)) {
      metrics->log(ordered_json{{"phase", "finetune_teacher"},
                                {"step", step},
                                {"loss", scalar_value(g, loss)},
                                {"lr", opt.last_lr()}});
    }
  }
  return m;
}

template <typename T>
Stage1Result<T> stage1_distill_prune(const RunSettings& s, PretextModel<T>& teacher,
                                     const Corpus& corpus, MetricsWriter* metrics) {
  freeze_params(teacher.trainable_params());

  Stage1Result<T> r;
  r.student = make_student(teacher.encoder, s.method());
  thaw_params(r.student.named_params());
  const GateLayout& layout = r.student.gate_layout;
  const std::vector<int64_t> counts = layout.param_counts();

  r.gates = GateSet<T>(layout.total, static_cast<T>(s.log_alpha_init),
                       static_cast<T>(s.gate_beta), static_cast<T>(s.stretch_lo),
                       static_cast<T>(s.stretch_hi));
  r.lagrangian.target_sparsity = s.target_sparsity;
  r.lagrangian.warmup_steps =
      std::max<int64_t>(1, static_cast<int64_t>(std::llround(s.schedule_fraction *
                                                             static_cast<double>(s.steps_stage1))));

  // Non-KD arm: the student trains on the pretext objective instead, through
  // its own copy of the classification head.
  PretextModel<T> student_pretext;
  if (!s.use_kd) {
    student_pretext.encoder = CascadedEncoder<T>();  // placeholder; uses r.student below
    student_pretext.head_w = teacher.head_w;
    student_pretext.head_b = teacher.head_b;
    student_pretext.head_w.requires_grad = student_pretext.head_b.requires_grad = true;
    student_pretext.quant_proj = teacher.quant_proj;
    student_pretext.codebook = teacher.codebook;
  }

  DistillSpec<T> spec =
      DistillSpec<T>::identity_pairs(select_layers(s.model.total_layers(), s.distill_rule()));
  spec.weight_l1 = s.weight_l1;
  spec.weight_cos = s.weight_cos;

  std::vector<ParamGroup<T>> groups;
  {
    auto params = r.student.named_params();
    if (!s.use_kd) {
      params.push_back({"student_pretext_head/w", &student_pretext.head_w, "head"});
      params.push_back({"student_pretext_head/bias", &student_pretext.head_b, "head"});
    }
    groups.push_back(main_group(std::move(params), s));
  }
  groups.push_back(ParamGroup<T>{{{"gates/log_alpha", &r.gates.log_alpha}}, s.gate_lr, 0.0, false});
  groups.push_back(ParamGroup<T>{{{"lagrangian/lambda1", &r.lagrangian.lambda1},
                                  {"lagrangian/lambda2", &r.lagrangian.lambda2}},
                                 s.multiplier_lr,
                                 0.0,
                                 /*ascend=*/true,
                                 s.multiplier_beta2});
  AdamW<T> opt(std::move(groups), adam_config(s));

  int64_t cosine_zeros = 0;
  std::vector<Val> first_utt_pairs;
  for (int64_t step = 0; step < s.steps_stage1; ++step) {
    opt.zero_grad();
    Graph<T> g(run_key(s, "stage1", step));
    Val z = sample_gates(g, r.gates);
    GateCtx<T> ctx{z, &layout};
    const auto batch = batch_indices(phase_seed(s, "stage1"), step, s.batch_size,
                                     static_cast<int64_t>(corpus.utts.size()));
    std::vector<Val> losses;
    for (size_t bi = 0; bi < batch.size(); ++bi) {
      const Utterance& utt = corpus.utts[static_cast<size_t>(batch[bi])];
      const Tensor<T> feats = to_precision<T>(utt.features);
      if (s.use_kd) {
        Val x = g.constant(feats);
        auto teacher_taps =
            encoder_forward(g, teacher.encoder, x, static_cast<const GateCtx<T>*>(nullptr));
        auto student_taps = encoder_forward(g, r.student, x, &ctx);
        std::vector<Val>* pp = (bi == 0) ? &first_utt_pairs : nullptr;
        if (pp != nullptr) pp->clear();
        losses.push_back(distill_loss(g, spec, teacher_taps.layer_outputs,
                                      student_taps.layer_outputs, pp));
      } else {
        student_pretext.encoder = std::move(r.student);
        Val l = pretext_loss(g, student_pretext, s, feats,
                             run_key(s, "stage1_mask", step).derive(bi), &ctx);
        r.student = std::move(student_pretext.encoder);
        losses.push_back(l);
      }
    }
    Val task = batch_mean(g, losses);
    Val p = prob_nonzero(g, r.gates);
    Val sparsity = current_sparsity(g, p, counts);
    Val penalty = lagrangian_penalty(g, r.lagrangian, sparsity, r.lagrangian.scheduled_target(step));
    Val total = g.add(task, penalty);
    g.backward(total);
    opt.step();
    cosine_zeros += g.cosine_zero_count;
    r.final_task_loss = scalar_value(g, task);

    if (metrics != nullptr && (step % s.log_every == 0 || step + 1 == s.steps_stage1)) {
      std::vector<double> pair_values;
      for (Val pv : first_utt_pairs) pair_values.push_back(scalar_value(g, pv));
      metrics->log(ordered_json{{"phase", "stage1"},
                                {"step", step},
                                {"loss", scalar_value(g, total)},
                                {"task", scalar_value(g, task)},
                                {"pair_losses", pair_values},
                                {"penalty", scalar_value(g, penalty)},
                                {"sparsity", scalar_value(g, sparsity)},
                                {"target", r.lagrangian.scheduled_target(step)},
                                {"lambda1", static_cast<double>(r.lagrangian.lambda1.at(0))},
                                {"lambda2", static_cast<double>(r.lagrangian.lambda2.at(0))},
                                {"lr", opt.last_lr()},
                                {"cosine_zero", cosine_zeros}});
    }
  }
  r.achieved_expected_sparsity = expected_sparsity_now(r.gates, counts);
  return r;
}

template <typename T>
void stage2_refine(const RunSettings& s, CascadedEncoder<T>& teacher_enc,
                   CascadedEncoder<T>& student, const Corpus& corpus, MetricsWriter* metrics,
                   TwoStageSummary<T>* summary) {
  freeze_params(teacher_enc.named_params());
  thaw_params(student.named_params());
  SF_CHECK_CONTRACT(!student.gated(), "stage 2 expects the compact (post-surgery) student");

  DistillSpec<T> spec =
      DistillSpec<T>::identity_pairs(select_layers(s.model.total_layers(), s.distill_rule()));
  spec.weight_l1 = s.weight_l1;
  spec.weight_cos = s.weight_cos;

  AdamW<T> opt({main_group(student.named_params(), s)}, adam_config(s));

  const int64_t window = 50;
  std::vector<double> first_losses, last_losses;
  for (int64_t step = 0; step < s.steps_stage2; ++step) {
    opt.zero_grad();
    Graph<T> g(run_key(s, "stage2", step));
    const auto batch = batch_indices(phase_seed(s, "stage2"), step, s.batch_size,
                                     static_cast<int64_t>(corpus.utts.size()));
    std::vector<Val> losses;
    for (int64_t idx : batch) {
      Val x = g.constant(to_precision<T>(corpus.utts[static_cast<size_t>(idx)].features));
      auto teacher_taps =
          encoder_forward(g, teacher_enc, x, static_cast<const GateCtx<T>*>(nullptr));
      auto student_taps = encoder_forward(g, student, x, static_cast<const GateCtx<T>*>(nullptr));
      losses.push_back(
          distill_loss(g, spec, teacher_taps.layer_outputs, student_taps.layer_outputs));
    }
    Val loss = batch_mean(g, losses);
    g.backward(loss);
    opt.step();

    const double lv = scalar_value(g, loss);
    if (static_cast<int64_t>(first_losses.size()) < window) first_losses.push_back(lv);
    last_losses.push_back(lv);
    if (static_cast<int64_t>(last_losses.size()) > window) {
      last_losses.erase(last_losses.begin());
    }
    if (metrics != nullptr && (step % s.log_every == 0 || step + 1 == s.steps_stage2)) {
      metrics->log(ordered_json{
          {"phase", "stage2"}, {"step", step}, {"loss", lv}, {"lr", opt.last_lr()}});
    }
  }
  if (summary != nullptr) {
    auto avg = [](const std::vector<double>& v) {
      if (v.empty()) return 0.0;
      double acc = 0;
      for (double x : v) acc += x;
      return acc / static_cast<double>(v.size());
    };
    summary->stage2_first_window = avg(first_losses);
    summary->stage2_last_window = avg(last_losses);
  }
}

template <typename T>
JointSummary<T> joint_prune_finetune(const RunSettings& s, CascadedEncoder<T>& teacher_enc,
                                     const AsrModel<T>* teacher_asr, const Corpus& corpus,
                                     MetricsWriter* metrics, AsrModel<T>* compact_out) {
  freeze_params(teacher_enc.named_params());

  AsrModel<T> student;
  student.encoder = make_student(teacher_enc, s.method());
  thaw_params(student.encoder.named_params());
  if (teacher_asr != nullptr) {
    student.predictor = teacher_asr->predictor;
    student.joint = teacher_asr->joint;
    thaw_params(student.predictor.named_params());
    thaw_params(student.joint.named_params());
  } else {
    student.predictor = make_predictor<T>(s.model, RngKey(s.seed, 0).derive("student_asr"));
    student.joint = make_joint<T>(s.model, RngKey(s.seed, 0).derive("student_asr"));
  }

  const GateLayout& layout = student.encoder.gate_layout;
  const std::vector<int64_t> counts = layout.param_counts();
  GateSet<T> gates(layout.total, static_cast<T>(s.log_alpha_init), static_cast<T>(s.gate_beta),
                   static_cast<T>(s.stretch_lo), static_cast<T>(s.stretch_hi));
  LagrangianState<T> lagrangian;
  lagrangian.target_sparsity = s.target_sparsity;
  lagrangian.warmup_steps = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(s.schedule_fraction *
                                           static_cast<double>(s.steps_joint))));

  std::vector<ParamGroup<T>> groups;
  groups.push_back(main_group(student.trainable_params(), s));
  groups.push_back(ParamGroup<T>{{{"gates/log_alpha", &gates.log_alpha}}, s.gate_lr, 0.0, false});
  groups.push_back(ParamGroup<T>{{{"lagrangian/lambda1", &lagrangian.lambda1},
                                  {"lagrangian/lambda2", &lagrangian.lambda2}},
                                 s.multiplier_lr,
                                 0.0,
                                 true,
                                 s.multiplier_beta2});
  AdamW<T> opt(std::move(groups), adam_config(s));

  DistillSpec<T> kd_weights;
  kd_weights.weight_l1 = s.weight_l1;
  kd_weights.weight_cos = s.weight_cos;

  for (int64_t step = 0; step < s.steps_joint; ++step) {
    opt.zero_grad();
    Graph<T> g(run_key(s, "joint", step));
    Val z = sample_gates(g, gates);
    GateCtx<T> ctx{z, &layout};
    const auto batch = batch_indices(phase_seed(s, "joint"), step, s.batch_size,
                                     static_cast<int64_t>(corpus.utts.size()));
    std::vector<Val> losses;
    double rnnt_value = 0, kd_value = 0;
    for (int64_t idx : batch) {
      const Utterance& utt = corpus.utts[static_cast<size_t>(idx)];
      Val x = g.constant(to_precision<T>(utt.features));
      auto student_taps = encoder_forward(g, student.encoder, x, &ctx);
      Val utt_loss = two_tap_rnnt(g, student, student_taps, utt.labels);
      rnnt_value += scalar_value(g, utt_loss);
      if (s.use_kd) {
        auto teacher_taps =
            encoder_forward(g, teacher_enc, x, static_cast<const GateCtx<T>*>(nullptr));
        Val kd = kd_encoder_loss(g, kd_weights, teacher_taps.causal_out,
                                 teacher_taps.noncausal_out, student_taps.causal_out,
                                 student_taps.noncausal_out);
        kd_value += scalar_value(g, kd);
        utt_loss = g.add(utt_loss, g.scale(kd, static_cast<T>(s.kd_weight)));
      }
      losses.push_back(utt_loss);
    }
    Val task = batch_mean(g, losses);
    Val p = prob_nonzero(g, gates);
    Val sparsity = current_sparsity(g, p, counts);
    Val penalty = lagrangian_penalty(g, lagrangian, sparsity, lagrangian.scheduled_target(step));
    Val total = g.add(task, penalty);
    g.backward(total);
    opt.step();

    if (metrics != nullptr && (step % s.log_every == 0 || step + 1 == s.steps_joint)) {
      const double bsz = static_cast<double>(batch.size());
      metrics->log(ordered_json{{"phase", "joint"},
                                {"step", step},
                                {"loss", scalar_value(g, total)},
                                {"rnnt", rnnt_value / bsz},
                                {"kd", kd_value / bsz},
                                {"penalty", scalar_value(g, penalty)},
                                {"sparsity", scalar_value(g, sparsity)},
                                {"target", lagrangian.scheduled_target(step)},
                                {"lambda1", static_cast<double>(lagrangian.lambda1.at(0))},
                                {"lambda2", static_cast<double>(lagrangian.lambda2.at(0))},
                                {"lr", opt.last_lr()}});
    }
  }

  JointSummary<T> summary;
  summary.layout = layout;
  summary.achieved_expected_sparsity = expected_sparsity_now(gates, counts);

  SurgeryStats stats;
  AsrModel<T> compact;
  compact.encoder = surgeon(student.encoder, gates, &stats);
  compact.predictor = student.predictor;
  compact.joint = student.joint;
  summary.surgery = stats;
  summary.achieved_exact_sparsity =
      1.0 - static_cast<double>(stats.prunable_params_after) /
                static_cast<double>(stats.prunable_params_before);

  EvalResult trained = evaluate_model(compact, corpus, s.max_symbols_per_frame);
  summary.ter_streaming = trained.ter_streaming;
  summary.ter_nonstreaming = trained.ter_nonstreaming;

  AsrModel<T> untrained;
  untrained.encoder = make_encoder<T>(s.model, RngKey(s.seed, 0).derive("untrained"));
  untrained.predictor = make_predictor<T>(s.model, RngKey(s.seed, 0).derive("untrained"));
  untrained.joint = make_joint<T>(s.model, RngKey(s.seed, 0).derive("untrained"));
  EvalResult base = evaluate_model(untrained, corpus, s.max_symbols_per_frame);
  summary.untrained_ter_streaming = base.ter_streaming;
  summary.untrained_ter_nonstreaming = base.ter_nonstreaming;

  summary.recorded_final_loss = rnnt_eval_loss(s, compact, corpus, 0);
  if (compact_out != nullptr) *compact_out = std::move(compact);
  return summary;
}

template <typename T>
EvalResult evaluate_model(AsrModel<T>& m, const Corpus& corpus, int64_t max_symbols,
                          std::vector<std::vector<int>>* hyps_streaming,
                          std::vector<std::vector<int>>* hyps_nonstreaming) {
  SF_CHECK_CONTRACT(!corpus.utts.empty(), "evaluation split is empty");
  int64_t edits_s = 0, edits_n = 0, ref_len = 0;
  for (size_t i = 0; i < corpus.utts.size(); ++i) {
    const Utterance& utt = corpus.utts[i];
    Graph<T> g(RngKey(0, 0));
    Val x = g.constant(to_precision<T>(utt.features));
    auto taps = encoder_forward(g, m.encoder, x, static_cast<const GateCtx<T>*>(nullptr));
    auto hyp_s = greedy_decode(g, m.joint, m.predictor, taps.causal_out,
                               static_cast<int>(max_symbols));
    auto hyp_n = greedy_decode(g, m.joint, m.predictor, taps.noncausal_out,
                               static_cast<int>(max_symbols));
    edits_s += edit_distance(hyp_s, utt.labels);
    edits_n += edit_distance(hyp_n, utt.labels);
    ref_len += std::max<int64_t>(1, static_cast<int64_t>(utt.labels.size()));
    if (hyps_streaming != nullptr) hyps_streaming->push_back(std::move(hyp_s));
    if (hyps_nonstreaming != nullptr) hyps_nonstreaming->push_back(std::move(hyp_n));
  }
  EvalResult r;
  r.utterances = static_cast<int64_t>(corpus.utts.size());
  r.ter_streaming = static_cast<double>(edits_s) / static_cast<double>(ref_len);
  r.ter_nonstreaming = static_cast<double>(edits_n) / static_cast<double>(ref_len);
  return r;
}

// ---------------------------------------------------------------------------
// Deterministic eval losses (recorded into checkpoints, reproduced on load)
// ---------------------------------------------------------------------------

template <typename T>
double distill_eval_loss(const RunSettings& s, CascadedEncoder<T>& teacher_enc,
                         CascadedEncoder<T>& student, const Corpus& corpus, int64_t step) {
  DistillSpec<T> spec =
      DistillSpec<T>::identity_pairs(select_layers(s.model.total_layers(), s.distill_rule()));
  spec.weight_l1 = s.weight_l1;
  spec.weight_cos = s.weight_cos;
  Graph<T> g(run_key(s, "eval_loss", step));
  const auto batch = batch_indices(phase_seed(s, "eval_loss"), step, s.batch_size,
                                   static_cast<int64_t>(corpus.utts.size()));
  std::vector<Val> losses;
  for (int64_t idx : batch) {
    Val x = g.constant(to_precision<T>(corpus.utts[static_cast<size_t>(idx)].features));
    auto tt = encoder_forward(g, teacher_enc, x, static_cast<const GateCtx<T>*>(nullptr));
    auto st = encoder_forward(g, student, x, static_cast<const GateCtx<T>*>(nullptr));
    losses.push_back(distill_loss(g, spec, tt.layer_outputs, st.layer_outputs));
  }
  return scalar_value(g, batch_mean(g, losses));
}

template <typename T>
double rnnt_eval_loss(const RunSettings& s, AsrModel<T>& m, const Corpus& corpus, int64_t step) {
  Graph<T> g(run_key(s, "eval_rnnt", step));
  const auto batch = batch_indices(phase_seed(s, "eval_rnnt"), step, s.batch_size,
                                   static_cast<int64_t>(corpus.utts.size()));
  std::vector<Val> losses;
  for (int64_t idx : batch) {
    const Utterance& utt = corpus.utts[static_cast<size_t>(idx)];
    Val x = g.constant(to_precision<T>(utt.features));
    auto taps = encoder_forward(g, m.encoder, x, static_cast<const GateCtx<T>*>(nullptr));
    losses.push_back(two_tap_rnnt(g, m, taps, utt.labels));
  }
  return scalar_value(g, batch_mean(g, losses));
}

namespace {

template <typename T>
double pretext_eval_loss(const RunSettings& s, PretextModel<T>& m, const Corpus& corpus,
                         int64_t step) {
  Graph<T> g(run_key(s, "eval_pretext", step));
  const auto batch = batch_indices(phase_seed(s, "eval_pretext"), step, s.batch_size,
                                   static_cast<int64_t>(corpus.utts.size()));
  std::vector<Val> losses;
  for (size_t bi = 0; bi < batch.size(); ++bi) {
    const Tensor<T> feats = to_precision<T>(corpus.utts[static_cast<size_t>(batch[bi])].features);
    losses.push_back(
        pretext_loss(g, m, s, feats, run_key(s, "eval_pretext_mask", step).derive(bi)));
  }
  return scalar_value(g, batch_mean(g, losses));
}

}  // namespace

// ---------------------------------------------------------------------------
// Full runs with artifacts
// ---------------------------------------------------------------------------

namespace {

struct RunScaffold {
  RunSettings settings;
  std::string out_dir;
  std::string started;

  RunScaffold(const json& cfg, const std::string& out) : settings(RunSettings::from_json(cfg)) {
    out_dir = out;
    started = now_iso8601();
    kernels::set_backend(kernels::parse_backend(settings.backend));
    ensure_dir(out_dir);
    write_json_file(cfg, out_dir + "/resolved_config.json");
  }
};

Corpus load_split(const std::string& data_dir, const std::string& split) {
  return load_corpus(data_dir + "/" + split + ".corpus");
}

json census_json(const CensusReport& r) {
  json blocks = json::object();
  for (const auto& [b, n] : r.params_by_block) blocks[b] = n;
  json flops = json::object();
  for (const auto& [b, f] : r.flops_by_block) flops[b] = mflops(f);
  return json{{"params_by_block", blocks},
              {"total_params", r.total_params},
              {"prunable_params", r.prunable_params},
              {"mflops_by_block", flops},
              {"encoder_mflops", mflops(r.encoder_flops)},
              {"reference_frames", r.reference_frames}};
}

// Retention relative to the same baseline census the table format uses.
json retention_json(const CensusReport& baseline, const CensusReport& compact) {
  json out = json::object();
  for (const std::string block : {"causal", "noncausal"}) {
    const double before = static_cast<double>(baseline.params_by_block.at(block));
    const double after = static_cast<double>(compact.params_by_block.at(block));
    out[block] = 100.0 * after / before;
  }
  return out;
}

std::string method_label(const std::string& method, bool use_kd) {
  return use_kd ? method + "+kd" : method;
}

}  // namespace

void run_gen_data(const json& cfg, const std::string& out_dir, bool force) {
  RunScaffold run(cfg, out_dir);
  for (const std::string split : {"train", "dev", "test"}) {
    const std::string path = out_dir + "/" + split + ".corpus";
    SF_CHECK(force || !fs::exists(path), ErrorCategory::kIo, "refusing to overwrite '", path,
             "' without --force");
  }
  for (const std::string split : {"train", "dev", "test"}) {
    write_corpus(generate_split(run.settings.data, split), out_dir + "/" + split + ".corpus");
  }
  write_run_meta(out_dir, run.started, json{{"verb", "gen-data"}});
}

template <typename T>
std::string run_pretrain_teacher(const json& cfg, const std::string& data_dir,
                                 const std::string& out_dir) {
  RunScaffold run(cfg, out_dir);
  const Corpus corpus = load_split(data_dir, "train");
  MetricsWriter metrics(out_dir + "/metrics.jsonl");
  PretextModel<T> teacher = pretrain_teacher<T>(run.settings, corpus, &metrics);

  const double recorded = pretext_eval_loss(run.settings, teacher, corpus, 0);
  const std::string ckpt = out_dir + "/teacher.ckpt";
  save_pretext_model(teacher, ckpt,
                     json{{"recorded_loss", recorded},
                          {"loss_kind", "pretext_ce"},
                          {"batch_step", 0},
                          {"config", cfg}});
  write_json_file(json{{"kind", "pretrain_teacher"}, {"recorded_loss", recorded}},
                  out_dir + "/report.json");
  write_run_meta(out_dir, run.started, json{{"verb", "pretrain-teacher"}});
  return ckpt;
}

template <typename T>
std::string run_finetune_teacher(const json& cfg, const std::string& data_dir,
                                 const std::string& teacher_ckpt, const std::string& out_dir) {
  RunScaffold run(cfg, out_dir);
  const Corpus corpus = load_split(data_dir, "train");
  MetricsWriter metrics(out_dir + "/metrics.jsonl");
  PretextModel<T> pretext = load_pretext_model<T>(teacher_ckpt);
  AsrModel<T> teacher = finetune_teacher<T>(run.settings, pretext, corpus, &metrics);

  const double recorded = rnnt_eval_loss(run.settings, teacher, corpus, 0);
  const std::string ckpt = out_dir + "/teacher_asr.ckpt";
  save_asr_model(teacher, ckpt,
                 json{{"recorded_loss", recorded},
                      {"loss_kind", "joint_rnnt"},
                      {"batch_step", 0},
                      {"config", cfg}});
  EvalResult ter = evaluate_model(teacher, corpus, run.settings.max_symbols_per_frame);
  write_json_file(json{{"kind", "finetune_teacher"},
                       {"recorded_loss", recorded},
                       {"ter", {{"streaming", ter.ter_streaming},
                                {"nonstreaming", ter.ter_nonstreaming}}}},
                  out_dir + "/report.json");
  write_run_meta(out_dir, run.started, json{{"verb", "finetune-teacher"}});
  return ckpt;
}

template <typename T>
void run_distill_prune(const json& cfg, const std::string& data_dir,
                       const std::string& teacher_ckpt, const std::string& out_dir) {
  RunScaffold run(cfg, out_dir);
  const RunSettings& s = run.settings;
  const Corpus corpus = load_split(data_dir, "train");
  MetricsWriter metrics(out_dir + "/metrics.jsonl");

  PretextModel<T> teacher = load_pretext_model<T>(teacher_ckpt);
  CensusReport baseline = census_and_flops(teacher.encoder, s.reference_frames);

  Stage1Result<T> stage1 = stage1_distill_prune<T>(s, teacher, corpus, &metrics);
  write_group_census_csv(stage1.student.gate_layout, out_dir + "/groups.csv");
  {
    Container c;
    save_encoder(c, stage1.student);
    save_gates(c, stage1.student, stage1.gates, stage1.lagrangian);
    c.meta["kind"] = "gated_student";
    c.save(out_dir + "/student_stage1.ckpt");
  }

  TwoStageSummary<T> summary;
  CascadedEncoder<T> compact = surgeon(stage1.student, stage1.gates, &summary.surgery);
  summary.achieved_exact_sparsity =
      1.0 - static_cast<double>(summary.surgery.prunable_params_after) /
                static_cast<double>(summary.surgery.prunable_params_before);

  stage2_refine<T>(s, teacher.encoder, compact, corpus, &metrics, &summary);
  summary.recorded_final_loss = distill_eval_loss<T>(s, teacher.encoder, compact, corpus, 0);

  {
    Container c;
    save_encoder(c, compact);
    c.meta["kind"] = "encoder";
    c.meta["run"] = json{{"recorded_loss", summary.recorded_final_loss},
                         {"loss_kind", "stage2_distill"},
                         {"batch_step", 0},
                         {"teacher_ckpt", fs::absolute(teacher_ckpt).string()},
                         {"config", cfg}};
    c.save(out_dir + "/student_compact.ckpt");
  }

  CensusReport after = census_and_flops(compact, s.reference_frames);
  json report{{"kind", "distill_prune"},
              {"method", s.method_name},
              {"use_kd", s.use_kd},
              {"scenario", s.scenario},
              {"teacher_mode", s.teacher_mode},
              {"baseline", census_json(baseline)},
              {"compact", census_json(after)},
              {"retention_pct", retention_json(baseline, after)},
              {"achieved_sparsity", summary.achieved_exact_sparsity},
              {"expected_sparsity_at_end", stage1.achieved_expected_sparsity},
              {"target_sparsity", s.target_sparsity},
              {"groups_closed", summary.surgery.groups_closed},
              {"groups_total", summary.surgery.groups_total},
              {"stage2_first_window", summary.stage2_first_window},
              {"stage2_last_window", summary.stage2_last_window},
              {"recorded_loss", summary.recorded_final_loss}};
  write_json_file(report, out_dir + "/report.json");
  write_retention_table({out_dir + "/report.json"}, out_dir + "/table3.csv");
  write_run_meta(out_dir, run.started, json{{"verb", "distill-prune"}});
}

template <typename T>
void run_joint_prune(const json& cfg, const std::string& data_dir,
                     const std::string& teacher_ckpt, const std::string& out_dir) {
  RunScaffold run(cfg, out_dir);
  const RunSettings& s = run.settings;
  const Corpus corpus = load_split(data_dir, "train");
  MetricsWriter metrics(out_dir + "/metrics.jsonl");

  // PT mode distills from the pretext encoder; PTFT from an encoder already
  // fine-tuned as part of an ASR model (whose predictor/joint seed the student).
  PretextModel<T> pretext_teacher;
  AsrModel<T> asr_teacher;
  CascadedEncoder<T>* teacher_enc = nullptr;
  const AsrModel<T>* teacher_asr = nullptr;
  const json meta = checkpoint_meta(teacher_ckpt);
  const std::string kind = meta.value("kind", "");
  if (s.teacher_mode == "ptft_encoder") {
    SF_CHECK(kind == "asr", ErrorCategory::kConfig,
             "teacher_mode ptft_encoder needs an asr checkpoint (finetune-teacher output), got '",
             kind, "'");
    asr_teacher = load_asr_model<T>(teacher_ckpt);
    freeze_params(asr_teacher.trainable_params());
    teacher_enc = &asr_teacher.encoder;
    teacher_asr = &asr_teacher;
  } else {
    SF_CHECK(kind == "pretext", ErrorCategory::kConfig,
             "teacher_mode pt_encoder needs a pretext checkpoint, got '", kind, "'");
    pretext_teacher = load_pretext_model<T>(teacher_ckpt);
    freeze_params(pretext_teacher.trainable_params());
    teacher_enc = &pretext_teacher.encoder;
  }

  CensusReport baseline = census_and_flops(*teacher_enc, s.reference_frames);
  AsrModel<T> compact;
  JointSummary<T> summary =
      joint_prune_finetune<T>(s, *teacher_enc, teacher_asr, corpus, &metrics, &compact);

  write_group_census_csv(summary.layout, out_dir + "/groups.csv");
  save_asr_model(compact, out_dir + "/asr_compact.ckpt",
                 json{{"recorded_loss", summary.recorded_final_loss},
                      {"loss_kind", "joint_rnnt"},
                      {"batch_step", 0},
                      {"config", cfg}});

  CensusReport after = census_and_flops(compact.encoder, s.reference_frames);
  json report{{"kind", "joint_prune"},
              {"method", s.method_name},
              {"use_kd", s.use_kd},
              {"scenario", s.scenario},
              {"teacher_mode", s.teacher_mode},
              {"baseline", census_json(baseline)},
              {"compact", census_json(after)},
              {"retention_pct", retention_json(baseline, after)},
              {"achieved_sparsity", summary.achieved_exact_sparsity},
              {"expected_sparsity_at_end", summary.achieved_expected_sparsity},
              {"target_sparsity", s.target_sparsity},
              {"groups_closed", summary.surgery.groups_closed},
              {"groups_total", summary.surgery.groups_total},
              {"ter",
               {{"streaming", summary.ter_streaming},
                {"nonstreaming", summary.ter_nonstreaming},
                {"untrained_streaming", summary.untrained_ter_streaming},
                {"untrained_nonstreaming", summary.untrained_ter_nonstreaming}}},
              {"recorded_loss", summary.recorded_final_loss}};
  write_json_file(report, out_dir + "/report.json");
  write_retention_table({out_dir + "/report.json"}, out_dir + "/table3.csv");
  write_run_meta(out_dir, run.started, json{{"verb", "joint-prune"}});
}

template <typename T>
EvalResult run_evaluate(const json& cfg, const std::string& data_dir, const std::string& ckpt,
                        const std::string& split, const std::string& out_dir) {
  RunScaffold run(cfg, out_dir);
  const Corpus corpus = load_split(data_dir, split);
  SF_CHECK_CONTRACT(!corpus.utts.empty(), "evaluation split '", split, "' is empty");
  AsrModel<T> m = load_asr_model<T>(ckpt);

  std::vector<std::vector<int>> hyp_s, hyp_n;
  EvalResult r =
      evaluate_model(m, corpus, run.settings.max_symbols_per_frame, &hyp_s, &hyp_n);

  std::ofstream hyp_file(out_dir + "/hypotheses.jsonl", std::ios::trunc);
  for (size_t i = 0; i < corpus.utts.size(); ++i) {
    ordered_json line{{"utt", i},
                      {"ref", corpus.utts[i].labels},
                      {"hyp_streaming", hyp_s[i]},
                      {"hyp_nonstreaming", hyp_n[i]},
                      {"ter_streaming", token_error_rate(hyp_s[i], corpus.utts[i].labels)},
                      {"ter_nonstreaming", token_error_rate(hyp_n[i], corpus.utts[i].labels)}};
    hyp_file << line.dump() << "\n";
  }
  write_json_file(json{{"kind", "evaluate"},
                       {"split", split},
                       {"utterances", r.utterances},
                       {"ter", {{"streaming", r.ter_streaming},
                                {"nonstreaming", r.ter_nonstreaming}}}},
                  out_dir + "/report.json");
  // metrics.jsonl is part of the artifact contract for every run directory
  MetricsWriter metrics(out_dir + "/metrics.jsonl");
  metrics.log(ordered_json{{"phase", "evaluate"},
                           {"split", split},
                           {"ter_streaming", r.ter_streaming},
                           {"ter_nonstreaming", r.ter_nonstreaming}});
  write_run_meta(out_dir, run.started, json{{"verb", "evaluate"}});
  return r;
}

template <typename T>
double reproduce_recorded_loss(const std::string& ckpt_path, const std::string& data_dir) {
  Container c = Container::load(ckpt_path);
  SF_CHECK(c.meta.contains("run"), ErrorCategory::kIo, "checkpoint '", ckpt_path,
           "' records no loss");
  const json& runj = c.meta.at("run");
  const RunSettings s = RunSettings::from_json(runj.at("config"));
  const Corpus corpus = load_split(data_dir, "train");
  const int64_t step = runj.at("batch_step").get<int64_t>();
  const std::string kind = runj.at("loss_kind").get<std::string>();
  if (kind == "stage2_distill") {
    CascadedEncoder<T> student = load_encoder<T>(c);
    PretextModel<T> teacher =
        load_pretext_model<T>(runj.at("teacher_ckpt").get<std::string>());
    return distill_eval_loss<T>(s, teacher.encoder, student, corpus, step);
  }
  if (kind == "joint_rnnt") {
    AsrModel<T> m = load_asr_model<T>(ckpt_path);
    return rnnt_eval_loss<T>(s, m, corpus, step);
  }
  if (kind == "pretext_ce") {
    PretextModel<T> m = load_pretext_model<T>(ckpt_path);
    return pretext_eval_loss<T>(s, m, corpus, step);
  }
  fail(ErrorCategory::kIo, str("unknown recorded loss kind '", kind, "'"));
}

void write_retention_table(const std::vector<std::string>& report_paths,
                           const std::string& csv_path) {
  struct Column {
    std::string scenario;
    std::string label;
    double causal = 0, noncausal = 0;
  };
  std::vector<Column> cols;
  for (const std::string& path : report_paths) {
    std::ifstream f(path);
    SF_CHECK(f.good(), ErrorCategory::kIo, "cannot open report '", path, "'");
    json r = json::parse(f);
    if (!r.contains("retention_pct")) continue;
    Column c;
    c.scenario = r.value("scenario", "?");
    c.label = method_label(r.value("method", "?"), r.value("use_kd", false));
    c.causal = r.at("retention_pct").at("causal").get<double>();
    c.noncausal = r.at("retention_pct").at("noncausal").get<double>();
    cols.push_back(std::move(c));
  }
  std::stable_sort(cols.begin(), cols.end(), [](const Column& a, const Column& b) {
    if (a.scenario != b.scenario) return a.scenario < b.scenario;
    return a.label < b.label;
  });

  std::ofstream out(csv_path, std::ios::trunc);
  SF_CHECK(out.good(), ErrorCategory::kIo, "cannot write '", csv_path, "'");
  out << "block";
  for (const Column& c : cols) out << "," << c.label << " " << c.scenario;
  out << "\n";
  out << "causal";
  char buf[32];
  for (const Column& c : cols) {
    std::snprintf(buf, sizeof(buf), "%.1f", c.causal);
    out << "," << buf;
  }
  out << "\nnon-causal";
  for (const Column& c : cols) {
    std::snprintf(buf, sizeof(buf), "%.1f", c.noncausal);
    out << "," << buf;
  }
  out << "\n";
}

// ---------------------------------------------------------------------------

#define SF_INSTANTIATE_PIPELINE(T)                                                              \
  template PretextModel<T> make_pretext_model<T>(const RunSettings&);                           \
  template std::vector<int64_t> quantize_frames<T>(const PretextModel<T>&, const Tensor<T>&);   \
  template Val pretext_loss<T>(Graph<T>&, PretextModel<T>&, const RunSettings&,                 \
                               const Tensor<T>&, RngKey, const GateCtx<T>*);                    \
  template PretextModel<T> pretrain_teacher<T>(const RunSettings&, const Corpus&,               \
                                               MetricsWriter*);                                 \
  template AsrModel<T> finetune_teacher<T>(const RunSettings&, const PretextModel<T>&,          \
                                           const Corpus&, MetricsWriter*);                      \
  template Stage1Result<T> stage1_distill_prune<T>(const RunSettings&, PretextModel<T>&,        \
                                                   const Corpus&, MetricsWriter*);              \
  template void stage2_refine<T>(const RunSettings&, CascadedEncoder<T>&, CascadedEncoder<T>&,  \
                                 const Corpus&, MetricsWriter*, TwoStageSummary<T>*);           \
  template JointSummary<T> joint_prune_finetune<T>(const RunSettings&, CascadedEncoder<T>&,     \
                                                   const AsrModel<T>*, const Corpus&,           \
                                                   MetricsWriter*, AsrModel<T>*);               \
  template EvalResult evaluate_model<T>(AsrModel<T>&, const Corpus&, int64_t,                   \
                                        std::vector<std::vector<int>>*,                         \
                                        std::vector<std::vector<int>>*);                        \
  template double distill_eval_loss<T>(const RunSettings&, CascadedEncoder<T>&,                 \
                                       CascadedEncoder<T>&, const Corpus&, int64_t);            \
  template double rnnt_eval_loss<T>(const RunSettings&, AsrModel<T>&, const Corpus&, int64_t);  \
  template std::string run_pretrain_teacher<T>(const json&, const std::string&,                 \
                                               const std::string&);                             \
  template std::string run_finetune_teacher<T>(const json&, const std::string&,                 \
                                               const std::string&, const std::string&);         \
  template void run_distill_prune<T>(const json&, const std::string&, const std::string&,       \
                                     const std::string&);                                       \
  template void run_joint_prune<T>(const json&, const std::string&, const std::string&,         \
                                   const std::string&);                                         \
  template EvalResult run_evaluate<T>(const json&, const std::string&, const std::string&,      \
                                      const std::string&, const std::string&);                  \
  template double reproduce_recorded_loss<T>(const std::string&, const std::string&)

SF_INSTANTIATE_PIPELINE(float);
SF_INSTANTIATE_PIPELINE(double);
#undef SF_INSTANTIATE_PIPELINE

}  // namespace slimformer
