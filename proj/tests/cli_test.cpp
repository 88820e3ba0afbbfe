// Drives the command-line binary end to end: exit codes, artifact layout,
// and bitwise determinism of the metrics across identical runs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
  if (!ok) {
    ++failures;
    std::cerr << "[FAIL] " << what << "\n";
  } else {
    std::cout << "[ok] " << what << "\n";
  }
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: cli_test <slimformer-binary> [scratch-dir]\n";
    return 2;
  }
  const std::string bin = argv[1];
  const std::string scratch = argc > 2 ? argv[2] : "cli_test_scratch";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  const std::string cfg = scratch + "/config.json";
  {
    std::ofstream f(cfg);
    f << R"({"seed": 11, "model": {"causal_layers": 2, "noncausal_layers": 1, "model_dim": 8,
            "heads": 2, "ffn_mult": 2, "conv_kernel": 3, "predictor_dim": 8, "joint_dim": 8},
            "data": {"vocab_size": 6, "feature_dim": 6, "train_utts": 16, "dev_utts": 4,
            "test_utts": 4, "max_labels": 4},
            "pretext": {"codebook_size": 8, "proj_dim": 4, "steps": 12, "batch_size": 2},
            "pipeline": {"steps_stage1": 16, "steps_stage2": 8, "steps_joint": 16,
            "steps_finetune": 8, "batch_size": 2, "log_every": 4}})";
  }

  expect(run(bin + " no-such-verb") == 2, "unknown verb exits 2");
  expect(run(bin + " distill-prune --data x --teacher t --out " + scratch + "/x") == 2,
         "missing config exits 2");
  expect(run(bin + " gen-data --config /nonexistent.json --out " + scratch + "/x") == 2,
         "missing config file exits 2");
  expect(run(bin + " gen-data --config " + cfg + " --set bogus.key=1 --out " + scratch + "/x") ==
             2,
         "unknown override key exits 2");

  const std::string data = scratch + "/data";
  expect(run(bin + " gen-data --config " + cfg + " --out " + data) == 0, "gen-data succeeds");
  expect(run(bin + " gen-data --config " + cfg + " --out " + data) == 1,
         "gen-data refuses to overwrite without --force");
  expect(run(bin + " gen-data --config " + cfg + " --out " + data + " --force") == 0,
         "gen-data --force succeeds");

  // Byte-identical regeneration under the same seed.
  const std::string data2 = scratch + "/data2";
  expect(run(bin + " gen-data --config " + cfg + " --out " + data2) == 0, "second gen-data");
  expect(slurp(data + "/train.corpus") == slurp(data2 + "/train.corpus"),
         "same-seed corpora are byte-identical");

  const std::string teacher_dir = scratch + "/teacher";
  expect(run(bin + " pretrain-teacher --config " + cfg + " --data " + data + " --out " +
             teacher_dir) == 0,
         "pretrain-teacher succeeds");
  const std::string teacher = teacher_dir + "/teacher.ckpt";

  // Two identical distill-prune runs: metrics must match bitwise.
  const std::string dp1 = scratch + "/dp1", dp2 = scratch + "/dp2";
  expect(run(bin + " distill-prune --config " + cfg + " --data " + data + " --teacher " +
             teacher + " --out " + dp1) == 0,
         "distill-prune succeeds");
  expect(run(bin + " distill-prune --config " + cfg + " --data " + data + " --teacher " +
             teacher + " --out " + dp2) == 0,
         "second distill-prune succeeds");
  expect(!slurp(dp1 + "/metrics.jsonl").empty() &&
             slurp(dp1 + "/metrics.jsonl") == slurp(dp2 + "/metrics.jsonl"),
         "same-seed metrics are byte-identical");
  expect(slurp(dp1 + "/report.json") == slurp(dp2 + "/report.json"),
         "same-seed reports are byte-identical");

  for (const char* f :
       {"resolved_config.json", "metrics.jsonl", "run_meta.json", "report.json",
        "student_stage1.ckpt", "student_compact.ckpt", "table3.csv", "groups.csv"}) {
    expect(fs::exists(dp1 + "/" + std::string(f)), std::string("artifact present: ") + f);
  }

  // Override changes behavior and lands in the resolved snapshot.
  const std::string dp3 = scratch + "/dp3";
  expect(run(bin + " distill-prune --config " + cfg +
             " --set gates.target_sparsity=0.7 --set pipeline.method=lrf --data " + data +
             " --teacher " + teacher + " --out " + dp3) == 0,
         "distill-prune with overrides succeeds");
  expect(slurp(dp3 + "/resolved_config.json").find("0.7") != std::string::npos,
         "resolved config records the override");

  const std::string joint_dir = scratch + "/joint";
  expect(run(bin + " joint-prune --config " + cfg + " --data " + data + " --teacher " + teacher +
             " --out " + joint_dir) == 0,
         "joint-prune succeeds");
  expect(fs::exists(joint_dir + "/asr_compact.ckpt"), "joint checkpoint present");

  const std::string eval_dir = scratch + "/eval";
  expect(run(bin + " evaluate --config " + cfg + " --data " + data + " --checkpoint " +
             joint_dir + "/asr_compact.ckpt --split test --out " + eval_dir) == 0,
         "evaluate succeeds");
  expect(fs::exists(eval_dir + "/hypotheses.jsonl"), "hypotheses written");
  expect(run(bin + " evaluate --config " + cfg + " --data " + data +
             " --checkpoint /nonexistent.ckpt --split test --out " + scratch + "/e2") == 1,
         "evaluate with a missing checkpoint exits 1");
  // Evaluating a non-asr checkpoint must name the problem, exit 1.
  expect(run(bin + " evaluate --config " + cfg + " --data " + data + " --checkpoint " + teacher +
             " --split test --out " + scratch + "/e3") == 1,
         "evaluate with a pretext checkpoint exits 1");

  // Same checkpoint, same split, twice: identical TER report.
  const std::string eval2 = scratch + "/eval2";
  expect(run(bin + " evaluate --config " + cfg + " --data " + data + " --checkpoint " +
             joint_dir + "/asr_compact.ckpt --split test --out " + eval2) == 0,
         "second evaluate succeeds");
  expect(slurp(eval_dir + "/report.json") == slurp(eval2 + "/report.json"),
         "evaluation is deterministic");

  const std::string table = scratch + "/table3.csv";
  expect(run(bin + " report --out " + table + " " + dp1 + "/report.json " + joint_dir +
             "/report.json") == 0,
         "report merge succeeds");
  {
    std::string t = slurp(table);
    expect(t.find("causal") != std::string::npos && t.find("non-causal") != std::string::npos,
           "retention table has causal and non-causal rows");
  }

  expect(run(bin + " grad-check") == 0, "grad-check passes");

  if (failures == 0) {
    std::cout << "cli_test: all checks passed\n";
    return 0;
  }
  std::cerr << "cli_test: " << failures << " check(s) failed\n";
  return 1;
}
