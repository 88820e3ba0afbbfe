#include <vector>

#include "doctest.h"
#include "slimformer/kernels.hpp"
#include "slimformer/rng.hpp"

using namespace slimformer;
namespace k = slimformer::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(int64_t n, uint64_t stream) {
  RngKey key(123, stream);
  std::vector<T> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    v[static_cast<size_t>(i)] = static_cast<T>(key.normal(static_cast<uint64_t>(i)));
  }
  return v;
}

// The vector variants are written to match the scalar reference bit-for-bit
// on finite inputs; equality here is exact, not approximate.
template <typename T>
void check_bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CAPTURE(i);
    CHECK(a[i] == b[i]);
  }
}

template <typename T>
void run_equivalence(int64_t m, int64_t kk, int64_t n, uint64_t stream) {
  if (!k::cpu_has_avx2()) return;

  auto a = random_vec<T>(m * kk, stream);
  auto b = random_vec<T>(kk * n, stream + 1);

  std::vector<T> c_ref(static_cast<size_t>(m * n));
  k::scalar::matmul(a.data(), b.data(), c_ref.data(), m, kk, n);

  k::set_backend(k::Backend::kAvx2);
  std::vector<T> c_simd(static_cast<size_t>(m * n));
  k::matmul(a.data(), b.data(), c_simd.data(), m, kk, n);
  k::set_backend(k::Backend::kAuto);

  check_bitwise_equal(c_ref, c_simd);
}

}  // namespace

TEST_CASE("matmul scalar and avx2 agree bitwise across shapes") {
  // Odd sizes exercise the vector tails.
  run_equivalence<double>(3, 4, 2, 10);
  run_equivalence<double>(7, 13, 5, 20);
  run_equivalence<double>(16, 32, 33, 30);
  run_equivalence<double>(1, 1, 1, 40);
  run_equivalence<float>(7, 13, 5, 50);
  run_equivalence<float>(16, 32, 9, 60);
}

TEST_CASE("pointwise kernels scalar and avx2 agree bitwise") {
  if (!k::cpu_has_avx2()) return;
  const int64_t n = 103;  // not a multiple of any lane width
  auto a = random_vec<double>(n, 70);
  auto b = random_vec<double>(n, 71);

  std::vector<double> r1(static_cast<size_t>(n)), r2(static_cast<size_t>(n));

  k::scalar::vec_add(a.data(), b.data(), r1.data(), n);
  k::set_backend(k::Backend::kAvx2);
  k::vec_add(a.data(), b.data(), r2.data(), n);
  check_bitwise_equal(r1, r2);

  k::set_backend(k::Backend::kScalar);
  k::vec_mul(a.data(), b.data(), r1.data(), n);
  k::set_backend(k::Backend::kAvx2);
  k::vec_mul(a.data(), b.data(), r2.data(), n);
  check_bitwise_equal(r1, r2);

  k::scalar::vec_sub(a.data(), b.data(), r1.data(), n);
  k::vec_sub(a.data(), b.data(), r2.data(), n);
  check_bitwise_equal(r1, r2);

  k::scalar::vec_scale(a.data(), 1.7, r1.data(), n);
  k::vec_scale(a.data(), 1.7, r2.data(), n);
  check_bitwise_equal(r1, r2);

  k::scalar::vec_clamp(a.data(), -0.5, 0.5, r1.data(), n);
  k::vec_clamp(a.data(), -0.5, 0.5, r2.data(), n);
  check_bitwise_equal(r1, r2);

  r1 = b;
  r2 = b;
  k::scalar::vec_axpy(0.3, a.data(), r1.data(), n);
  k::vec_axpy(0.3, a.data(), r2.data(), n);
  check_bitwise_equal(r1, r2);

  k::set_backend(k::Backend::kAuto);
}

TEST_CASE("matmul handles zero inner dimension") {
  std::vector<double> a, b;
  std::vector<double> c(6, 99.0);
  k::scalar::matmul(a.data(), b.data(), c.data(), 2, 0, 3);
  for (double v : c) CHECK(v == 0.0);
}

TEST_CASE("backend selection") {
  k::set_backend(k::Backend::kScalar);
  CHECK(k::backend_name() == "scalar");
  k::set_backend(k::Backend::kAuto);
  if (k::cpu_has_avx2()) {
    CHECK(k::backend_name() == "avx2");
  } else {
    CHECK(k::backend_name() == "scalar");
  }
}
