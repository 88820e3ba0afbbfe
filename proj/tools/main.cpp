// slimformer command line: corpus generation, teacher preparation, the
// two-stage and joint prune-and-distill pipelines, evaluation and reporting.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "slimformer/config.hpp"
#include "slimformer/gradsuite.hpp"
#include "slimformer/pipeline.hpp"

using namespace slimformer;
using nlohmann::json;

namespace {

int error_exit(const Error& e) {
  std::fprintf(stderr, "error category=%s msg=\"%s\"\n", error_category_name(e.category()),
               e.what());
  return (e.category() == ErrorCategory::kConfig || e.category() == ErrorCategory::kUsage) ? 2 : 1;
}

json resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
  if (config_path.empty()) {
    fail(ErrorCategory::kUsage, "--config is required for this command");
  }
  return resolve_config(load_config_file(config_path), overrides);
}

template <typename F32Fn, typename F64Fn>
int dispatch_precision(const json& cfg, F32Fn f32, F64Fn f64) {
  if (cfg.at("precision").get<std::string>() == "f32") {
    f32();
  } else {
    f64();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale structured pruning and distillation for a cascaded "
               "conformer transducer"};
  app.require_subcommand(1);

  std::string config_path, data_dir, teacher_ckpt, checkpoint, out_dir, split = "test";
  std::vector<std::string> overrides;
  std::vector<std::string> report_inputs;
  bool force = false;

  auto add_common = [&](CLI::App* cmd, bool needs_data) {
    cmd->add_option("--config", config_path, "config file (JSON)");
    cmd->add_option("--set", overrides, "dotted-path override, e.g. gates.target_sparsity=0.5");
    cmd->add_option("--out", out_dir, "output directory")->required();
    if (needs_data) cmd->add_option("--data", data_dir, "corpus directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic corpus splits");
  add_common(gen, false);
  gen->add_flag("--force", force, "overwrite existing corpus files");

  CLI::App* pretrain =
      app.add_subcommand("pretrain-teacher", "masked-prediction pretraining of the teacher");
  add_common(pretrain, true);

  CLI::App* finetune = app.add_subcommand(
      "finetune-teacher", "fine-tune the pretrained teacher as a transducer encoder");
  add_common(finetune, true);
  finetune->add_option("--teacher", teacher_ckpt, "pretext teacher checkpoint")->required();

  CLI::App* distill = app.add_subcommand(
      "distill-prune", "two-stage distill-and-prune of a pretrained teacher");
  add_common(distill, true);
  distill->add_option("--teacher", teacher_ckpt, "pretext teacher checkpoint")->required();

  CLI::App* joint =
      app.add_subcommand("joint-prune", "joint pruning and transducer fine-tuning");
  add_common(joint, true);
  joint->add_option("--teacher", teacher_ckpt, "teacher checkpoint (pretext or asr)")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "decode a checkpoint on a corpus split");
  add_common(evaluate, true);
  evaluate->add_option("--checkpoint", checkpoint, "asr checkpoint")->required();
  evaluate->add_option("--split", split, "train | dev | test");

  CLI::App* report = app.add_subcommand(
      "report", "merge run reports into the retention table (csv)");
  report->add_option("--out", out_dir, "output csv path")->required();
  report->add_option("reports", report_inputs, "report.json files")->required();

  CLI::App* gradcheck =
      app.add_subcommand("grad-check", "run the finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      run_gen_data(resolve(config_path, overrides), out_dir, force);
      return 0;
    }
    if (pretrain->parsed()) {
      const json cfg = resolve(config_path, overrides);
      return dispatch_precision(
          cfg, [&] { run_pretrain_teacher<float>(cfg, data_dir, out_dir); },
          [&] { run_pretrain_teacher<double>(cfg, data_dir, out_dir); });
    }
    if (finetune->parsed()) {
      const json cfg = resolve(config_path, overrides);
      return dispatch_precision(
          cfg, [&] { run_finetune_teacher<float>(cfg, data_dir, teacher_ckpt, out_dir); },
          [&] { run_finetune_teacher<double>(cfg, data_dir, teacher_ckpt, out_dir); });
    }
    if (distill->parsed()) {
      const json cfg = resolve(config_path, overrides);
      return dispatch_precision(
          cfg, [&] { run_distill_prune<float>(cfg, data_dir, teacher_ckpt, out_dir); },
          [&] { run_distill_prune<double>(cfg, data_dir, teacher_ckpt, out_dir); });
    }
    if (joint->parsed()) {
      const json cfg = resolve(config_path, overrides);
      return dispatch_precision(
          cfg, [&] { run_joint_prune<float>(cfg, data_dir, teacher_ckpt, out_dir); },
          [&] { run_joint_prune<double>(cfg, data_dir, teacher_ckpt, out_dir); });
    }
    if (evaluate->parsed()) {
      const json cfg = resolve(config_path, overrides);
      EvalResult r;
      dispatch_precision(
          cfg, [&] { r = run_evaluate<float>(cfg, data_dir, checkpoint, split, out_dir); },
          [&] { r = run_evaluate<double>(cfg, data_dir, checkpoint, split, out_dir); });
      std::printf("ter streaming=%.4f nonstreaming=%.4f (%lld utts)\n", r.ter_streaming,
                  r.ter_nonstreaming, static_cast<long long>(r.utterances));
      return 0;
    }
    if (report->parsed()) {
      write_retention_table(report_inputs, out_dir);
      return 0;
    }
    if (gradcheck->parsed()) {
      return grad_suite_passes(&std::cout) ? 0 : 1;
    }
  } catch (const Error& e) {
    return error_exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error category=runtime msg=\"%s\"\n", e.what());
    return 1;
  }
  return 2;
}
