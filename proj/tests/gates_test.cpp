#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "slimformer/gates.hpp"
#include "slimformer/grad_check.hpp"
#include "slimformer/optimizer.hpp"

using namespace slimformer;

namespace {

constexpr double kBeta = 2.0 / 3.0;
constexpr double kLo = -0.1;
constexpr double kHi = 1.1;

RngKey test_key(uint64_t stream = 0) { return RngKey(99, stream); }

double chain_value(double log_alpha, double u) {
  Graph<double> g(test_key());
  Val la = g.constant_scalar(log_alpha);
  Val uv = g.constant_scalar(u);
  Val z = hard_concrete_chain(g, la, uv, kBeta, kLo, kHi);
  return g.value(z).at(0);
}

double closed_form_p_nonzero(double log_alpha) {
  const double x = log_alpha - kBeta * std::log(-kLo / kHi);
  return 1.0 / (1.0 + std::exp(-x));
}

// Direct scalar replay of the sampling chain, used as the Monte Carlo oracle.
double sample_z(double log_alpha, double u) {
  const double s = 1.0 / (1.0 + std::exp(-(std::log(u / (1.0 - u)) + log_alpha) / kBeta));
  const double sb = (kHi - kLo) * s + kLo;
  return std::min(1.0, std::max(0.0, sb));
}

}  // namespace

TEST_CASE("sampling chain scalar cases") {
  // Symmetric point: sigmoid(0) = 0.5 and the stretch is centered.
  CHECK(chain_value(0.0, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  // Low noise drives the stretched value below zero, clamped to exactly 0.
  CHECK(chain_value(0.0, 0.01) == 0.0);
}

TEST_CASE("sampling chain gradient w.r.t. log_alpha with frozen noise") {
  auto build = [](Graph<double>& g, const std::vector<Val>& in) {
    Val u = g.constant_scalar(0.6);
    return g.sum(hard_concrete_chain(g, in[0], u, kBeta, kLo, kHi));
  };
  auto report = grad_check<double>(build, {Tensor<double>::scalar(0.0)}, test_key());
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("eval gates are deterministic and saturate") {
  GateSet<double> gates(3, 0.0, kBeta, kLo, kHi);
  gates.log_alpha.at(0) = 0.0;
  gates.log_alpha.at(1) = -20.0;
  gates.log_alpha.at(2) = 20.0;
  Tensor<double> z = eval_gates(gates);
  CHECK(z.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(z.at(1) == 0.0);
  CHECK(z.at(2) == 1.0);
}

TEST_CASE("prob_nonzero closed form matches Monte Carlo at 1e6 samples") {
  const int64_t n = 1'000'000;
  int case_idx = 0;
  for (double la : {-2.0, 0.0, 2.0}) {
    RngKey key = test_key(1000 + static_cast<uint64_t>(case_idx++));
    int64_t nonzero = 0, ones = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double z = sample_z(la, key.uniform_open(static_cast<uint64_t>(i)));
      CHECK(z >= 0.0);
      CHECK(z <= 1.0);
      if (z > 0.0) ++nonzero;
      if (z == 1.0) ++ones;
    }
    const double p_emp = static_cast<double>(nonzero) / static_cast<double>(n);
    const double p = closed_form_p_nonzero(la);
    CAPTURE(la);
    CHECK(std::abs(p_emp - p) < 0.01);
    // 3-sigma binomial bounds on the empirical masses at both endpoints.
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    CHECK(std::abs(p_emp - p) <= 3.0 * sigma);
    const double p_one = 1.0 / (1.0 + std::exp(-(la - kBeta * std::log((1.0 - kLo) / (kHi - 1.0)))));
    const double one_emp = static_cast<double>(ones) / static_cast<double>(n);
    const double sigma_one = std::sqrt(p_one * (1.0 - p_one) / static_cast<double>(n));
    CHECK(std::abs(one_emp - p_one) <= 3.0 * sigma_one);
    // Positive mass at both clamped endpoints for finite log_alpha.
    CHECK(nonzero < n);
    CHECK(ones > 0);
  }
}

TEST_CASE("prob_nonzero reference point and saturation") {
  // sigma((2/3) ln 11) = 0.8318...; the Monte Carlo case above vouches for it.
  CHECK(closed_form_p_nonzero(0.0) == doctest::Approx(0.832).epsilon(2e-3));
  CHECK(closed_form_p_nonzero(40.0) == doctest::Approx(1.0).epsilon(1e-12));

  GateSet<double> gates(1, 0.0, kBeta, kLo, kHi);
  Tensor<double> p = prob_nonzero_values(gates);
  CHECK(p.at(0) == doctest::Approx(closed_form_p_nonzero(0.0)).epsilon(1e-12));
}

TEST_CASE("more stretch below zero lowers the nonzero probability") {
  auto p_at = [](double lo) {
    const double x = 0.0 - kBeta * std::log(-lo / kHi);
    return 1.0 / (1.0 + std::exp(-x));
  };
  CHECK(p_at(-0.2) < p_at(-0.1));
  CHECK(p_at(-0.1) < p_at(-0.05));
}

TEST_CASE("current_sparsity arithmetic") {
  auto sparsity_of = [](std::vector<double> p, std::vector<int64_t> counts) {
    Graph<double> g(test_key());
    Tensor<double> pt({static_cast<int64_t>(p.size())}, p);
    return g.value(current_sparsity(g, g.constant(pt), counts)).at(0);
  };
  CHECK(sparsity_of({1, 1, 1}, {10, 20, 30}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sparsity_of({0, 0, 0}, {10, 20, 30}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sparsity_of({1, 0.5}, {100, 300}) == doctest::Approx(0.375).epsilon(1e-12));

  // Invariant under relabeling groups.
  CHECK(sparsity_of({0.9, 0.2, 0.6}, {5, 7, 11}) ==
        doctest::Approx(sparsity_of({0.6, 0.9, 0.2}, {11, 5, 7})).epsilon(1e-12));

  Graph<double> g(test_key());
  Val p = g.constant(Tensor<double>::zeros({0}));
  CHECK_THROWS_AS(current_sparsity(g, p, {}), Error);
}

TEST_CASE("lagrangian penalty values and multiplier gradient") {
  LagrangianState<double> state;
  {
    Graph<double> g(test_key());
    Val s = g.constant_scalar(0.83);
    Val pen = lagrangian_penalty(g, state, s, 0.83);
    CHECK(g.value(pen).at(0) == doctest::Approx(0.0).epsilon(1e-12));
  }
  state.lambda1 = Tensor<double>::scalar(1.0);
  state.lambda2 = Tensor<double>::scalar(2.0);
  state.lambda1.requires_grad = state.lambda2.requires_grad = true;
  {
    Graph<double> g(test_key());
    Val s = g.constant_scalar(0.5);
    Val pen = lagrangian_penalty(g, state, s, 0.83);
    CHECK(g.value(pen).at(0) == doctest::Approx(-0.1122).epsilon(1e-9));
    g.backward(pen);
    CHECK(state.lambda2.grad[0] == doctest::Approx(0.1089).epsilon(1e-9));
    state.lambda1.zero_grad();
    state.lambda2.zero_grad();
  }
}

TEST_CASE("target schedule is non-decreasing and exact at warmup end") {
  LagrangianState<double> state;
  state.target_sparsity = 0.83;
  state.warmup_steps = 700;
  double prev = -1;
  for (int64_t s = 0; s <= 2000; s += 7) {
    const double t = state.scheduled_target(s);
    CHECK(t >= prev);
    prev = t;
  }
  CHECK(state.scheduled_target(0) == 0.0);
  CHECK(state.scheduled_target(700) == 0.83);
  CHECK(state.scheduled_target(1500) == 0.83);
}

TEST_CASE("multiplier ascent: persistent s < t drives lambda1 down, s = t leaves it fixed") {
  LagrangianState<double> state;
  AdamW<double> opt({ParamGroup<double>{{{"lambda1", &state.lambda1}, {"lambda2", &state.lambda2}},
                                        1e-3, 0.0, /*ascend=*/true}},
                    AdamConfig{});
  double prev = 0.0;
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    Graph<double> g(test_key());
    Val s = g.constant_scalar(0.3);  // below the target, persistently
    Val pen = lagrangian_penalty(g, state, s, 0.8);
    g.backward(pen);
    opt.step();
    CHECK(state.lambda1.at(0) < prev);
    prev = state.lambda1.at(0);
  }

  LagrangianState<double> fixed;
  AdamW<double> opt2({ParamGroup<double>{{{"l1", &fixed.lambda1}, {"l2", &fixed.lambda2}}, 1e-3,
                                         0.0, true}},
                     AdamConfig{});
  opt2.zero_grad();
  Graph<double> g(test_key());
  Val pen = lagrangian_penalty(g, fixed, g.constant_scalar(0.8), 0.8);
  g.backward(pen);
  opt2.step();
  CHECK(fixed.lambda1.at(0) == 0.0);
  CHECK(fixed.lambda2.at(0) == 0.0);
}

TEST_CASE("toy scalar minimax converges to the target sparsity") {
  // One gate location parameter; a quadratic task loss pulls it toward
  // "mostly open" while the controller enforces sparsity 0.7.
  Tensor<double> a = Tensor<double>::scalar(2.5);
  a.requires_grad = true;
  LagrangianState<double> state;
  state.target_sparsity = 0.7;
  state.warmup_steps = 600;

  AdamW<double> opt(
      {ParamGroup<double>{{{"alpha", &a}}, 0.05, 0.0, false},
       ParamGroup<double>{{{"lambda1", &state.lambda1}, {"lambda2", &state.lambda2}}, 0.05, 0.0,
                          true}},
      AdamConfig{});

  double sparsity = 0.0;
  for (int step = 0; step < 2000; ++step) {
    opt.zero_grad();
    Graph<double> g(test_key(static_cast<uint64_t>(step)));
    Val av = g.leaf(&a);
    const double shift = -kBeta * std::log(-kLo / kHi);
    Val p = g.sigmoid(g.add(av, g.constant_scalar(shift)));
    Val s = g.sub(g.constant_scalar(1.0), p);
    Val task = g.mul(g.sub(av, g.constant_scalar(3.0)), g.sub(av, g.constant_scalar(3.0)));
    Val pen = lagrangian_penalty(g, state, s, state.scheduled_target(step));
    Val loss = g.add(g.scale(task, 0.05), pen);
    g.backward(loss);
    opt.step();
    sparsity = g.value(s).at(0);
  }
  CHECK(std::abs(sparsity - 0.7) <= 0.02);
}

TEST_CASE("whole chain sample -> sparsity -> penalty gradient checks with frozen noise") {
  GateSet<double> gates(4, 0.7, kBeta, kLo, kHi);
  LagrangianState<double> state;
  state.lambda1 = Tensor<double>::scalar(0.4);
  state.lambda2 = Tensor<double>::scalar(1.3);
  state.lambda1.requires_grad = state.lambda2.requires_grad = true;
  const std::vector<int64_t> counts = {10, 20, 30, 40};

  auto build = [&](Graph<double>& g, const std::vector<Val>& in) {
    Val u = g.uniform({4});
    Val z = hard_concrete_chain(g, in[0], u, kBeta, kLo, kHi);
    Val w = g.constant(Tensor<double>::from({4}, {0.3, -0.2, 0.5, 0.1}));
    Val sampled_term = g.sum(g.mul(z, w));
    const double shift = -kBeta * std::log(-kLo / kHi);
    Val p = g.sigmoid(g.add(in[0], g.constant_scalar(shift)));
    Val s = current_sparsity(g, p, counts);
    Val l1 = in[1];
    Val l2 = in[2];
    Val diff = g.sub(s, g.constant_scalar(0.6));
    Val pen = g.add(g.mul(l1, diff), g.mul(l2, g.mul(diff, diff)));
    return g.add(sampled_term, pen);
  };
  auto report = grad_check<double>(
      build, {gates.log_alpha, state.lambda1, state.lambda2}, test_key(321));
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}
