#include "slimformer/gradsuite.hpp"

#include <cmath>
#include <cstdio>

#include "slimformer/distill.hpp"
#include "slimformer/grad_check.hpp"
#include "slimformer/models.hpp"
#include "slimformer/transducer.hpp"

namespace slimformer {

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

RngKey suite_key(uint64_t stream) { return RngKey(1234, stream); }

void record(std::vector<GradSuiteEntry>& entries, std::ostream* out, const std::string& name,
            const GradCheckReport& report) {
  GradSuiteEntry e{name, report.max_rel_err, report.pass};
  if (out != nullptr) {
    char line[256];
    std::snprintf(line, sizeof(line), "[%s] %-38s max rel err %.3e", e.pass ? "PASS" : "FAIL",
                  name.c_str(), e.max_rel_err);
    (*out) << line;
    if (!e.pass) (*out) << "  (" << report.detail << ")";
    (*out) << "\n";
  }
  entries.push_back(std::move(e));
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::ostream* out) {
  using G = Graph<double>;
  std::vector<GradSuiteEntry> entries;

  record(entries, out, "matmul",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) { return g.sum(g.matmul(in[0], in[1])); },
             {Tensor<double>::randn({3, 4}, suite_key(1)), Tensor<double>::randn({4, 2}, suite_key(2))},
             suite_key(0), kEps, kTol));

  record(entries, out, "pointwise chain",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               Val a = g.swish(in[0]);
               Val b = g.sigmoid(g.mul(a, in[0]));
               Val c = g.exp(g.scale(b, 0.3));
               Val d = g.log(g.add(c, g.constant_scalar(0.5)));
               Val e = g.clamp(g.sub(d, b), -0.4, 0.9);
               return g.sum(e);
             },
             {Tensor<double>::randn({3, 5}, suite_key(3))}, suite_key(0), kEps, kTol));

  record(entries, out, "softmax / layernorm / reductions",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               Val w = g.constant(Tensor<double>::randn({4, 6}, suite_key(4)));
               Val sm = g.softmax(in[0], -1);
               Val ln = g.layernorm(g.mul(sm, w), -1);
               Val l1 = g.l1_mean(ln, w);
               Val cs = g.mean(g.cosine(ln, w, 1));
               return g.add(g.add(l1, cs), g.mean(ln));
             },
             {Tensor<double>::randn({4, 6}, suite_key(5))}, suite_key(0), kEps, kTol));

  record(entries, out, "slice / concat / gathers",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               Val l = g.slice(in[0], 1, 0, 2);
               Val r = g.slice(in[0], 1, 2, 3);
               Val cat = g.concat({r, l}, 1);
               Val rows = g.gather_rows(cat, {2, 0, 1, 2});
               Val picked = g.col_pick(rows, {0, 4, 2, 1});
               return g.sum(g.mul(picked, picked));
             },
             {Tensor<double>::randn({3, 5}, suite_key(6))}, suite_key(0), kEps, kTol));

  for (bool causal : {true, false}) {
    record(entries, out, causal ? "depthwise conv (causal)" : "depthwise conv (centered)",
           grad_check<double>(
               [causal](G& g, const std::vector<Val>& in) {
                 return g.sum(g.swish(g.conv1d_depthwise(in[0], in[1], in[2], causal)));
               },
               {Tensor<double>::randn({6, 3}, suite_key(7)),
                Tensor<double>::randn({3, 5}, suite_key(8)),
                Tensor<double>::randn({3}, suite_key(9))},
               suite_key(0), kEps, kTol));
  }

  record(entries, out, "hard concrete chain (frozen noise)",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               Val u = g.uniform({6});
               Val z = hard_concrete_chain<double>(g, in[0], u, 2.0 / 3.0, -0.1, 1.1);
               Val w = g.constant(Tensor<double>::randn({6}, suite_key(10)));
               return g.sum(g.mul(z, w));
             },
             {Tensor<double>::randn({6}, suite_key(11))}, suite_key(42), kEps, kTol));

  record(entries, out, "gates -> sparsity -> penalty",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               const double shift = -(2.0 / 3.0) * std::log(0.1 / 1.1);
               Val p = g.sigmoid(g.add(in[0], g.constant_scalar(shift)));
               Val s = current_sparsity(g, p, {16, 64, 64, 128});
               Val diff = g.sub(s, g.constant_scalar(0.62));
               return g.add(g.mul(in[1], diff), g.mul(in[2], g.mul(diff, diff)));
             },
             {Tensor<double>::randn({4}, suite_key(12)), Tensor<double>::scalar(0.7),
              Tensor<double>::scalar(1.1)},
             suite_key(0), kEps, kTol));

  record(entries, out, "factorized map forward (A, B, z)",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               Val x = g.constant(Tensor<double>::randn({3, 4}, suite_key(13)));
               Val h = g.mul(g.matmul(x, in[0]), in[2]);
               return g.mean(g.swish(g.matmul_nt(h, in[1])));
             },
             {Tensor<double>::randn({4, 2}, suite_key(14)),
              Tensor<double>::randn({5, 2}, suite_key(15)),
              Tensor<double>::from({2}, {0.8, 0.35})},
             suite_key(0), kEps, kTol));

  record(entries, out, "layer-wise distillation loss",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               DistillSpec<double> spec = DistillSpec<double>::identity_pairs({1, 2});
               Val t1 = g.constant(Tensor<double>::randn({4, 5}, suite_key(16)));
               Val t2 = g.constant(Tensor<double>::randn({4, 5}, suite_key(17)));
               return distill_loss(g, spec, {t1, t2}, {in[0], in[1]});
             },
             {Tensor<double>::randn({4, 5}, suite_key(18)),
              Tensor<double>::randn({4, 5}, suite_key(19))},
             suite_key(0), kEps, kTol));

  record(entries, out, "encoder-output distillation",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) {
               DistillSpec<double> w;
               Val tc = g.constant(Tensor<double>::randn({3, 4}, suite_key(20)));
               Val tn = g.constant(Tensor<double>::randn({3, 4}, suite_key(21)));
               return kd_encoder_loss(g, w, tc, tn, in[0], in[1]);
             },
             {Tensor<double>::randn({3, 4}, suite_key(22)),
              Tensor<double>::randn({3, 4}, suite_key(23))},
             suite_key(0), kEps, kTol));

  record(entries, out, "transducer loss (T=2, U=1)",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) { return transducer_nll(g, in[0], {1}, 2); },
             {Tensor<double>::randn({2, 2, 3}, suite_key(24))}, suite_key(0), kEps, kTol));

  record(entries, out, "transducer loss (T=3, U=2)",
         grad_check<double>(
             [](G& g, const std::vector<Val>& in) { return transducer_nll(g, in[0], {0, 2}, 3); },
             {Tensor<double>::randn({3, 3, 4}, suite_key(25))}, suite_key(0), kEps, kTol));

  {
    ConformerConfig cfg;
    cfg.causal_layers = 1;
    cfg.noncausal_layers = 1;
    cfg.model_dim = 4;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.conv_kernel = 3;
    cfg.vocab_size = 3;
    cfg.feature_dim = 4;
    cfg.predictor_dim = 4;
    cfg.joint_dim = 4;
    auto enc = make_encoder<double>(cfg, suite_key(26));
    auto pred = make_predictor<double>(cfg, suite_key(27));
    auto joint = make_joint<double>(cfg, suite_key(28));

    record(entries, out, "tiny encoder stack (w.r.t. input)",
           grad_check<double>(
               [&](G& g, const std::vector<Val>& in) {
                 auto taps = encoder_forward(g, enc, in[0],
                                             static_cast<const GateCtx<double>*>(nullptr));
                 Val w = g.constant(Tensor<double>::randn({3, 4}, suite_key(29)));
                 return g.sum(g.mul(taps.noncausal_out, w));
               },
               {Tensor<double>::randn({3, 4}, suite_key(30))}, suite_key(0), kEps, kTol));

    record(entries, out, "predictor recurrence (3 labels)",
           grad_check_params<double>(
               [&](G& g) {
                 Val states = predictor_forward(g, pred, {0, 2, 1});
                 Val w = g.constant(Tensor<double>::randn({4, 4}, suite_key(31)));
                 return g.sum(g.mul(states, w));
               },
               {&pred.w_gh, &pred.b_c}, suite_key(0), kEps, kTol));

    record(entries, out, "transducer through predictor and joint",
           grad_check<double>(
               [&](G& g, const std::vector<Val>& in) {
                 return transducer_loss(g, joint, pred, in[0], {1, 0});
               },
               {Tensor<double>::randn({3, 4}, suite_key(32))}, suite_key(0), kEps, kTol));
  }

  return entries;
}

bool grad_suite_passes(std::ostream* out) {
  bool all = true;
  for (const auto& e : run_grad_suite(out)) all = all && e.pass;
  return all;
}

}  // namespace slimformer
