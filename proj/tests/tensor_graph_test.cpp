#include <cmath>

#include "doctest.h"
#include "slimformer/grad_check.hpp"
#include "slimformer/graph.hpp"

using namespace slimformer;

namespace {
RngKey test_key(uint64_t stream = 0) { return RngKey(42, stream); }
}  // namespace

TEST_CASE("matmul forward examples") {
  Graph<double> g(test_key());
  Val eye = g.constant(Tensor<double>::from({2, 2}, {1, 0, 0, 1}));
  Val b = g.constant(Tensor<double>::from({2, 2}, {2, 3, 4, 5}));
  Val c = g.matmul(eye, b);
  CHECK(g.value(c).data == std::vector<double>{2, 3, 4, 5});

  Val r = g.constant(Tensor<double>::from({1, 2}, {1, 2}));
  Val col = g.constant(Tensor<double>::from({2, 1}, {3, 4}));
  Val prod = g.matmul(r, col);
  CHECK(g.value(prod).at(0) == doctest::Approx(11.0).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Graph<double> g(test_key());
  Val a = g.constant(Tensor<double>::zeros({2, 3}));
  Val b = g.constant(Tensor<double>::zeros({2, 3}));
  CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("[2x3]"), Error);
}

TEST_CASE("matmul gradient matches finite differences") {
  auto build = [](Graph<double>& g, const std::vector<Val>& in) {
    return g.sum(g.matmul(in[0], in[1]));
  };
  auto a = Tensor<double>::randn({3, 4}, test_key(1));
  auto b = Tensor<double>::randn({4, 2}, test_key(2));
  auto report = grad_check<double>(build, {a, b}, test_key());
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("elementwise basics") {
  Graph<double> g(test_key());
  Val zero = g.constant_scalar(0.0);
  CHECK(g.value(g.sigmoid(zero)).at(0) == doctest::Approx(0.5).epsilon(1e-15));

  // Clamped region: value 0, zero gradient.
  Tensor<double> x = Tensor<double>::scalar(-0.2);
  x.requires_grad = true;
  Graph<double> g2(test_key());
  Val xv = g2.leaf(&x);
  Val y = g2.clamp(xv, 0.0, 1.0);
  CHECK(g2.value(y).at(0) == 0.0);
  g2.backward(g2.sum(y));
  CHECK(x.grad[0] == 0.0);
}

TEST_CASE("swish gradient at x=1 vs finite differences") {
  auto build = [](Graph<double>& g, const std::vector<Val>& in) { return g.sum(g.swish(in[0])); };
  auto report = grad_check<double>(build, {Tensor<double>::scalar(1.0)}, test_key());
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("log rejects non-positive input") {
  Graph<double> g(test_key());
  Val a = g.constant(Tensor<double>::from({2}, {1.0, -0.5}));
  CHECK_THROWS_AS(g.log(a), Error);
}

TEST_CASE("softmax symmetry and row normalization") {
  Graph<double> g(test_key());
  Val a = g.constant(Tensor<double>::from({2}, {0, 0}));
  Val s = g.softmax(a, 0);
  CHECK(g.value(s).at(0) == doctest::Approx(0.5).epsilon(1e-12));

  Val m = g.constant(Tensor<double>::randn({5, 7}, test_key(3), 3.0));
  Val sm = g.softmax(m, -1);
  const auto& t = g.value(sm);
  for (int64_t i = 0; i < 5; ++i) {
    double row = 0;
    for (int64_t j = 0; j < 7; ++j) {
      CHECK(t.at(i, j) >= 0.0);
      row += t.at(i, j);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("cosine of a vector with itself is 1; zero vector gives 0 and is counted") {
  Graph<double> g(test_key());
  Val v = g.constant(Tensor<double>::from({4}, {0.3, -1.2, 2.0, 0.7}));
  CHECK(g.value(g.cosine(v, v, 0)).at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.cosine_zero_count == 0);

  Val z = g.constant(Tensor<double>::zeros({4}));
  CHECK(g.value(g.cosine(v, z, 0)).at(0) == 0.0);
  CHECK(g.cosine_zero_count == 1);
}

TEST_CASE("layernorm output is standardized and gradient checks") {
  Graph<double> g(test_key());
  Val a = g.constant(Tensor<double>::randn({2, 5}, test_key(4), 2.0));
  Val y = g.layernorm(a, -1);
  const auto& t = g.value(y);
  for (int64_t i = 0; i < 2; ++i) {
    double mu = 0, var = 0;
    for (int64_t j = 0; j < 5; ++j) mu += t.at(i, j);
    mu /= 5;
    for (int64_t j = 0; j < 5; ++j) var += (t.at(i, j) - mu) * (t.at(i, j) - mu);
    var /= 5;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }

  auto build = [](Graph<double>& gg, const std::vector<Val>& in) {
    // weight the entries so the gradient is not constant
    Val w = gg.constant(Tensor<double>::randn({2, 5}, test_key(5)));
    return gg.sum(gg.mul(gg.layernorm(in[0], -1), w));
  };
  auto report = grad_check<double>(build, {Tensor<double>::randn({2, 5}, test_key(6), 2.0)},
                                   test_key());
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("backward basics") {
  Tensor<double> x = Tensor<double>::from({3}, {1, 2, 3});
  x.requires_grad = true;
  {
    Graph<double> g(test_key());
    Val loss = g.sum(g.leaf(&x));
    g.backward(loss);
    CHECK(x.grad == std::vector<double>{1, 1, 1});
  }
  Tensor<double> y = Tensor<double>::from({2}, {1, 2});
  y.requires_grad = true;
  {
    Graph<double> g(test_key());
    Val yv = g.leaf(&y);
    g.backward(g.sum(g.mul(yv, yv)));
    CHECK(y.grad == std::vector<double>{2, 4});
  }
}

TEST_CASE("backward rejects non-scalar loss and double invocation") {
  Tensor<double> x = Tensor<double>::from({2}, {1, 2});
  x.requires_grad = true;
  Graph<double> g(test_key());
  Val xv = g.leaf(&x);
  CHECK_THROWS_AS(g.backward(xv), Error);

  Graph<double> g2(test_key());
  Val loss = g2.sum(g2.leaf(&x));
  g2.backward(loss);
  CHECK_THROWS_AS(g2.backward(loss), Error);
}

TEST_CASE("composite graph gradient: matmul -> swish -> mean") {
  auto build = [](Graph<double>& g, const std::vector<Val>& in) {
    return g.mean(g.swish(g.matmul(in[0], in[1])));
  };
  auto a = Tensor<double>::randn({3, 4}, test_key(7));
  auto b = Tensor<double>::randn({4, 2}, test_key(8));
  auto report = grad_check<double>(build, {a, b}, test_key());
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("grad_check on identity has zero error") {
  auto build = [](Graph<double>& g, const std::vector<Val>& in) { return g.sum(in[0]); };
  auto report = grad_check<double>(build, {Tensor<double>::scalar(0.7)}, test_key());
  CHECK(report.max_rel_err < 1e-10);
}

TEST_CASE("structural ops: slice, concat, reshape, gathers") {
  auto build = [](Graph<double>& g, const std::vector<Val>& in) {
    Val left = g.slice(in[0], 1, 0, 2);
    Val right = g.slice(in[0], 1, 2, 2);
    Val swapped = g.concat({right, left}, 1);
    Val flat = g.reshape(swapped, {8});
    Val rows = g.gather_rows(g.reshape(flat, {4, 2}), {3, 0, 3});
    Val picked = g.col_pick(rows, {1, 0, 0});
    return g.sum(g.mul(picked, picked));
  };
  auto report = grad_check<double>(build, {Tensor<double>::randn({2, 4}, test_key(9))}, test_key());
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("broadcast add/mul over trailing axes") {
  Graph<double> g(test_key());
  Val a = g.constant(Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  Val row = g.constant(Tensor<double>::from({3}, {10, 20, 30}));
  CHECK(g.value(g.add(a, row)).data == std::vector<double>{11, 22, 33, 14, 25, 36});
  Val s = g.constant_scalar(2.0);
  CHECK(g.value(g.mul(a, s)).data == std::vector<double>{2, 4, 6, 8, 10, 12});

  auto build = [](Graph<double>& gg, const std::vector<Val>& in) {
    return gg.sum(gg.mul(gg.add(in[0], in[1]), in[1]));
  };
  auto report = grad_check<double>(
      build, {Tensor<double>::randn({2, 3}, test_key(10)), Tensor<double>::randn({3}, test_key(11))},
      test_key());
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("conv1d_depthwise gradients, causal and centered") {
  for (bool causal : {true, false}) {
    auto build = [causal](Graph<double>& g, const std::vector<Val>& in) {
      return g.sum(g.swish(g.conv1d_depthwise(in[0], in[1], in[2], causal)));
    };
    auto x = Tensor<double>::randn({6, 3}, test_key(12));
    auto w = Tensor<double>::randn({3, 5}, test_key(13));
    auto b = Tensor<double>::randn({3}, test_key(14));
    auto report = grad_check<double>(build, {x, w, b}, test_key());
    CAPTURE(causal);
    CAPTURE(report.detail);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("causal depthwise conv never reads the future") {
  Tensor<double> x = Tensor<double>::zeros({5, 1});
  x.at(4, 0) = 100.0;  // only the last frame is nonzero
  Tensor<double> w = Tensor<double>::full({1, 3}, 1.0);
  Graph<double> g(test_key());
  Val out = g.conv1d_depthwise(g.constant(x), g.constant(w), Val{}, /*causal=*/true);
  for (int64_t t = 0; t < 4; ++t) CHECK(g.value(out).at(t, 0) == 0.0);
  CHECK(g.value(out).at(4, 0) == 100.0);
}

TEST_CASE("uniform nodes replay for the same key and differ across keys") {
  Graph<double> g1(test_key(77));
  Graph<double> g2(test_key(77));
  Graph<double> g3(test_key(78));
  Val u1 = g1.uniform({16});
  Val u2 = g2.uniform({16});
  Val u3 = g3.uniform({16});
  CHECK(g1.value(u1).data == g2.value(u2).data);
  CHECK(g1.value(u1).data != g3.value(u3).data);
  for (double v : g1.value(u1).data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("forward results are bit-identical across runs for a fixed seed") {
  auto run = [] {
    Graph<double> g(test_key(5));
    Val a = g.constant(Tensor<double>::randn({4, 4}, test_key(20)));
    Val u = g.uniform({4, 4});
    Val y = g.softmax(g.matmul(g.swish(a), g.sigmoid(u)), -1);
    return g.value(y).data;
  };
  CHECK(run() == run());
}

TEST_CASE("gradients hold across 10 random seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto build = [](Graph<double>& g, const std::vector<Val>& in) {
      Val h = g.swish(g.matmul(in[0], in[1]));
      Val sm = g.softmax(h, -1);
      Val ln = g.layernorm(g.add(h, in[2]), -1);
      Val c = g.mean(g.cosine(sm, ln, 1));
      return g.add(g.l1_mean(sm, ln), c);
    };
    auto report = grad_check<double>(
        build,
        {Tensor<double>::randn({3, 4}, RngKey(seed, 1)), Tensor<double>::randn({4, 5}, RngKey(seed, 2)),
         Tensor<double>::randn({5}, RngKey(seed, 3))},
        RngKey(seed, 0));
    CAPTURE(seed);
    CAPTURE(report.detail);
    CHECK(report.max_rel_err < 1e-4);
  }
}
