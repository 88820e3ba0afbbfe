#include <cmath>

#include "doctest.h"
#include "slimformer/grad_check.hpp"
#include "slimformer/lowrank.hpp"
#include "slimformer/svd.hpp"

using namespace slimformer;

namespace {

RngKey test_key(uint64_t stream = 0) { return RngKey(314, stream); }

Tensor<double> reconstruct(const FactorizedLinear<double>& f) {
  Tensor<double> w({f.in_dim, f.out_dim});
  for (int64_t i = 0; i < f.in_dim; ++i) {
    for (int64_t j = 0; j < f.out_dim; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < f.rank; ++k) acc += f.a.at(i, k) * f.b.at(j, k);
      w.at(i, j) = acc;
    }
  }
  return w;
}

double fro_sq(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = a.at(i) - b.at(i);
    acc += d * d;
  }
  return acc;
}

// Independent oracle: squared singular values of W via power iteration with
// deflation on W^T W. Avoids the Jacobi code path entirely.
std::vector<double> power_iteration_sigma_sq(const Tensor<double>& w, int count) {
  const int64_t m = w.dim(0), n = w.dim(1);
  // G = W^T W
  std::vector<double> gram(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0;
      for (int64_t r = 0; r < m; ++r) acc += w.at(r, i) * w.at(r, j);
      gram[static_cast<size_t>(i * n + j)] = acc;
    }
  }
  std::vector<double> out;
  RngKey key = test_key(777);
  for (int c = 0; c < count; ++c) {
    std::vector<double> v(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = key.normal(static_cast<uint64_t>(c * n + i));
    double lambda = 0;
    for (int iter = 0; iter < 4000; ++iter) {
      std::vector<double> gv(static_cast<size_t>(n), 0.0);
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < n; ++j) gv[static_cast<size_t>(i)] += gram[static_cast<size_t>(i * n + j)] * v[static_cast<size_t>(j)];
      }
      double norm = 0;
      for (double x : gv) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0) break;
      for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = gv[static_cast<size_t>(i)] / norm;
      lambda = norm;
    }
    out.push_back(lambda);
    // Deflate: G -= lambda v v^T
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        gram[static_cast<size_t>(i * n + j)] -= lambda * v[static_cast<size_t>(i)] * v[static_cast<size_t>(j)];
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("init_rank arithmetic") {
  CHECK(init_rank(1024, 1024) == 512);
  CHECK(init_rank(8, 4) == 2);
  CHECK(init_rank(1, 1) == 1);
}

TEST_CASE("full-rank factorization reconstructs exactly") {
  Tensor<double> w = Tensor<double>::zeros({3, 3});
  w.at(0, 0) = 3;
  w.at(1, 1) = 2;
  w.at(2, 2) = 1;
  auto f = factorize(w, 3);
  CHECK(std::sqrt(fro_sq(reconstruct(f), w)) <= 1e-10);
}

TEST_CASE("rank-1 input reconstructs exactly at r=1") {
  Tensor<double> u = Tensor<double>::randn({5}, test_key(1));
  Tensor<double> v = Tensor<double>::randn({7}, test_key(2));
  Tensor<double> w({5, 7});
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t j = 0; j < 7; ++j) w.at(i, j) = u.at(i) * v.at(j);
  }
  auto f = factorize(w, 1);
  CHECK(std::sqrt(fro_sq(reconstruct(f), w)) <= 1e-10);
}

TEST_CASE("truncation error equals discarded singular energy (power-iteration oracle)") {
  Tensor<double> w = Tensor<double>::randn({6, 5}, test_key(3));
  auto sig_sq = power_iteration_sigma_sq(w, 5);
  auto f = factorize(w, 3);
  const double err = fro_sq(reconstruct(f), w);
  const double discarded = sig_sq[3] + sig_sq[4];
  CHECK(err == doctest::Approx(discarded).epsilon(1e-8));

  // Reconstruction error is non-increasing in the rank.
  double prev = 1e30;
  for (int64_t r = 1; r <= 5; ++r) {
    const double e = fro_sq(reconstruct(factorize(w, r)), w);
    CHECK(e <= prev + 1e-12);
    prev = e;
  }
}

TEST_CASE("factorize is deterministic") {
  Tensor<double> w = Tensor<double>::randn({6, 5}, test_key(4));
  auto f1 = factorize(w, 3);
  auto f2 = factorize(w, 3);
  CHECK(f1.a.data == f2.a.data);
  CHECK(f1.b.data == f2.b.data);
}

TEST_CASE("gated forward: ones, zeros, one-hot") {
  Tensor<double> w = Tensor<double>::randn({4, 3}, test_key(5));
  Tensor<double> bias = Tensor<double>::randn({3}, test_key(6));
  auto f = factorize(w, 3, bias);
  Tensor<double> x = Tensor<double>::randn({5, 4}, test_key(7));

  Tensor<double> ones = Tensor<double>::full({3}, 1.0);
  Tensor<double> with_ones = factorized_apply(f, x, &ones);
  Tensor<double> ungated = factorized_apply(f, x);
  CHECK(max_abs_diff(with_ones, ungated) <= 1e-10);

  Tensor<double> zeros = Tensor<double>::zeros({3});
  Tensor<double> with_zeros = factorized_apply(f, x, &zeros);
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t j = 0; j < 3; ++j) CHECK(with_zeros.at(i, j) == doctest::Approx(bias.at(j)));
  }

  // One-hot gate picks out a single rank-1 term.
  Tensor<double> ek = Tensor<double>::zeros({3});
  ek.at(1) = 1.0;
  Tensor<double> got = factorized_apply(f, x, &ek);
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      double acc = bias.at(j);
      for (int64_t c = 0; c < 4; ++c) acc += x.at(i, c) * f.a.at(c, 1) * f.b.at(j, 1);
      CHECK(got.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("prune_ranks: parameter arithmetic and masked/pruned equivalence") {
  Tensor<double> w = Tensor<double>::randn({8, 4}, test_key(8));
  auto f = factorize(w, 2);
  CHECK(f.weight_param_count() == 24);

  Tensor<double> keep_one = Tensor<double>::zeros({2});
  keep_one.at(0) = 1.0;
  auto pruned = prune_ranks(f, keep_one);
  CHECK(pruned.weight_param_count() == 12);

  // Identity when no gate closes.
  Tensor<double> open = Tensor<double>::full({2}, 1.0);
  auto same = prune_ranks(f, open);
  CHECK(same.a.data == f.a.data);
  CHECK(same.b.data == f.b.data);

  // Random layer, random gates with zeros and fractional values.
  Tensor<double> w2 = Tensor<double>::randn({6, 9}, test_key(9));
  auto f2 = factorize(w2, 5, Tensor<double>::randn({9}, test_key(10)));
  Tensor<double> z({5}, {0.0, 0.73, 1.0, 0.0, 0.41});
  auto compact = prune_ranks(f2, z);
  CHECK(compact.rank == 3);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> x = Tensor<double>::randn({3, 6}, test_key(100 + static_cast<uint64_t>(trial)));
    Tensor<double> masked = factorized_apply(f2, x, &z);
    Tensor<double> surgical = factorized_apply(compact, x);
    worst = std::max(worst, max_abs_diff(masked, surgical));
  }
  CHECK(worst <= 1e-10);

  // Fully pruned layer degenerates to a bias-only map.
  Tensor<double> none = Tensor<double>::zeros({5});
  auto empty = prune_ranks(f2, none);
  CHECK(empty.rank == 0);
  Tensor<double> x = Tensor<double>::randn({2, 6}, test_key(11));
  Tensor<double> out = factorized_apply(empty, x);
  for (int64_t i = 0; i < 2; ++i) {
    for (int64_t j = 0; j < 9; ++j) CHECK(out.at(i, j) == f2.bias.at(j));
  }
}

TEST_CASE("factorized forward gradient w.r.t. A, B, z") {
  auto build = [](Graph<double>& g, const std::vector<Val>& in) {
    Val x = g.constant(Tensor<double>::randn({3, 4}, test_key(12)));
    Val h = g.mul(g.matmul(x, in[0]), in[2]);
    Val out = g.matmul_nt(h, in[1]);
    return g.mean(g.swish(out));
  };
  auto a = Tensor<double>::randn({4, 2}, test_key(13));
  auto b = Tensor<double>::randn({5, 2}, test_key(14));
  auto z = Tensor<double>::from({2}, {0.9, 0.4});
  auto report = grad_check<double>(build, {a, b, z}, test_key());
  CAPTURE(report.detail);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("svd handles wide matrices and factorize rejects bad ranks") {
  Tensor<double> w = Tensor<double>::randn({3, 8}, test_key(15));
  auto svd = jacobi_svd(w);
  CHECK(svd.sigma.size() == 3);
  CHECK_THROWS_AS(factorize(w, 4), Error);
}
