#include "slimformer/config.hpp"

#include <fstream>

#include "slimformer/common.hpp"

namespace slimformer {

using nlohmann::json;

json default_config() {
  return json{
      {"seed", 7},
      {"precision", "f64"},
      {"compute", {{"backend", "auto"}}},
      {"data",
       {{"feature_dim", 16},
        {"vocab_size", 16},
        {"train_utts", 200},
        {"dev_utts", 50},
        {"test_utts", 50},
        {"min_labels", 2},
        {"max_labels", 8},
        {"frames_per_label_min", 2},
        {"frames_per_label_max", 4},
        {"noise_std", 0.1}}},
      {"model",
       {{"causal_layers", 4},
        {"noncausal_layers", 2},
        {"model_dim", 32},
        {"heads", 4},
        {"ffn_mult", 4},
        {"conv_kernel", 7},
        {"predictor_dim", 32},
        {"joint_dim", 32},
        {"max_positions", 256}}},
      {"pretext",
       {{"codebook_size", 16},
        {"proj_dim", 8},
        {"mask_prob", 0.3},
        {"mask_span_min", 1},
        {"mask_span_max", 2},
        {"steps", 2000},
        {"batch_size", 4}}},
      {"gates",
       {{"beta", 2.0 / 3.0},
        {"stretch_lo", -0.1},
        {"stretch_hi", 1.1},
        {"log_alpha_init", 2.5},
        {"target_sparsity", 0.5},
        {"schedule_fraction", 1.0 / 3.0}}},
      {"distill",
       {{"weight_l1", 0.5},
        {"weight_cos", 0.5},
        {"layer_rule", "block_ends"},  // or "stride:<k>"
        {"kd_weight", 1.0}}},
      {"optimizer",
       {{"lr", 1e-3},
        {"gate_lr", 0.1},
        {"multiplier_lr", 0.25},
        {"multiplier_beta2", 0.9},
        {"warmup_steps", 100},
        {"weight_decay", 0.0},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"eps", 1e-8}}},
      {"pipeline",
       {{"method", "l0"},  // or "lrf"
        {"use_kd", true},
        {"scenario", "task_agnostic"},  // or "task_specific"
        {"teacher_mode", "pt_encoder"},  // or "ptft_encoder"
        {"steps_stage1", 3000},
        {"steps_stage2", 1500},
        {"steps_joint", 4000},
        {"steps_finetune", 3000},
        {"batch_size", 4},
        {"log_every", 25}}},
      {"decode", {{"max_symbols_per_frame", 10}}},
      {"report", {{"reference_frames", 100}}},
  };
}

json load_config_file(const std::string& path) {
  std::ifstream f(path);
  SF_CHECK(f.good(), ErrorCategory::kConfig, "cannot open config file '", path, "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    fail(ErrorCategory::kConfig, str("config '", path, "' is not valid JSON: ", e.what()));
  }
}

void apply_override(json& tree, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  SF_CHECK(eq != std::string::npos && eq > 0, ErrorCategory::kConfig,
           "override must look like path.to.key=value, got '", assignment, "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json* node = &tree;
  size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    const size_t dot = path.find('.', start);
    parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    SF_CHECK(node->is_object() && node->contains(parts[i]), ErrorCategory::kConfig,
             "override path '", path, "': unknown key '", parts[i], "'");
    node = &(*node)[parts[i]];
  }
  SF_CHECK(node->is_object() && node->contains(parts.back()), ErrorCategory::kConfig,
           "override path '", path, "': unknown key '", parts.back(), "'");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // plain string
  }
  (*node)[parts.back()] = value;
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void validate_against(const json& tree, const json& defaults, const std::string& prefix) {
  for (const auto& [key, value] : tree.items()) {
    SF_CHECK(defaults.contains(key), ErrorCategory::kConfig, "unknown config key '", prefix, key,
             "'");
    const json& dv = defaults.at(key);
    if (dv.is_object()) {
      SF_CHECK(value.is_object(), ErrorCategory::kConfig, "config key '", prefix, key,
               "' must be an object");
      validate_against(value, dv, prefix + key + ".");
    } else {
      SF_CHECK(same_kind(value, dv), ErrorCategory::kConfig, "config key '", prefix, key,
               "' has the wrong type");
    }
  }
}

void fill_defaults(json& tree, const json& defaults) {
  for (const auto& [key, dv] : defaults.items()) {
    if (!tree.contains(key)) {
      tree[key] = dv;
    } else if (dv.is_object() && tree[key].is_object()) {
      fill_defaults(tree[key], dv);
    }
  }
}

}  // namespace

json resolve_config(json tree, const std::vector<std::string>& overrides) {
  const json defaults = default_config();
  SF_CHECK(tree.is_object(), ErrorCategory::kConfig, "config root must be an object");
  validate_against(tree, defaults, "");
  fill_defaults(tree, defaults);
  for (const std::string& o : overrides) apply_override(tree, o);
  validate_against(tree, defaults, "");
  return tree;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  SF_CHECK(f.good(), ErrorCategory::kIo, "cannot write '", path, "'");
  f << j.dump(2) << "\n";
}

}  // namespace slimformer
