#include "slimformer/kernels.hpp"

#include <cstring>

#include "slimformer/common.hpp"

namespace slimformer {
namespace kernels {

// ---------------------------------------------------------------------------
// Scalar reference kernels
// ---------------------------------------------------------------------------

namespace scalar {

// Loop order is i / k / j with a zero-initialized output row, so every C[i,j]
// is built by the same sequence of mul-then-add as the vectorized variants.
template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    std::memset(crow, 0, static_cast<size_t>(n) * sizeof(T));
    const T* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      const T* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) {
        crow[j] += aik * brow[j];
      }
    }
  }
}

template <typename T>
void vec_add(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void vec_sub(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void vec_mul(const T* a, const T* b, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void vec_scale(const T* a, T alpha, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * alpha;
}

template <typename T>
void vec_axpy(T alpha, const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void vec_clamp(const T* a, T lo, T hi, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    T v = a[i] < lo ? lo : a[i];
    out[i] = v > hi ? hi : v;
  }
}

template void matmul<float>(const float*, const float*, float*, int64_t, int64_t, int64_t);
template void matmul<double>(const double*, const double*, double*, int64_t, int64_t, int64_t);
template void vec_add<float>(const float*, const float*, float*, int64_t);
template void vec_add<double>(const double*, const double*, double*, int64_t);
template void vec_sub<float>(const float*, const float*, float*, int64_t);
template void vec_sub<double>(const double*, const double*, double*, int64_t);
template void vec_mul<float>(const float*, const float*, float*, int64_t);
template void vec_mul<double>(const double*, const double*, double*, int64_t);
template void vec_scale<float>(const float*, float, float*, int64_t);
template void vec_scale<double>(const double*, double, double*, int64_t);
template void vec_axpy<float>(float, const float*, float*, int64_t);
template void vec_axpy<double>(double, const double*, double*, int64_t);
template void vec_clamp<float>(const float*, float, float, float*, int64_t);
template void vec_clamp<double>(const double*, double, double, double*, int64_t);

}  // namespace scalar

// ---------------------------------------------------------------------------
// AVX2 variants (defined in kernels_avx2.cpp, compiled with -mavx2)
// ---------------------------------------------------------------------------

#if defined(SLIMFORMER_HAVE_AVX2)
namespace avx2 {
template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);
template <typename T>
void vec_add(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void vec_sub(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void vec_mul(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void vec_scale(const T* a, T alpha, T* out, int64_t n);
template <typename T>
void vec_axpy(T alpha, const T* x, T* y, int64_t n);
template <typename T>
void vec_clamp(const T* a, T lo, T hi, T* out, int64_t n);
}  // namespace avx2
#endif

// ---------------------------------------------------------------------------
// Runtime dispatch
// ---------------------------------------------------------------------------

bool cpu_has_avx2() {
#if defined(SLIMFORMER_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

namespace {
Backend resolve(Backend b) {
  if (b == Backend::kAuto) return cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
  return b;
}
Backend g_backend = resolve(Backend::kAuto);
}  // namespace

void set_backend(Backend b) {
  Backend r = resolve(b);
  SF_CHECK(r != Backend::kAvx2 || cpu_has_avx2(), ErrorCategory::kConfig,
           "avx2 backend requested but the CPU does not support AVX2");
  g_backend = r;
}

Backend active_backend() { return g_backend; }

std::string backend_name() { return g_backend == Backend::kAvx2 ? "avx2" : "scalar"; }

Backend parse_backend(const std::string& name) {
  if (name == "auto") return Backend::kAuto;
  if (name == "scalar") return Backend::kScalar;
  if (name == "avx2") return Backend::kAvx2;
  fail(ErrorCategory::kConfig, str("unknown compute backend '", name, "'"));
}

#if defined(SLIMFORMER_HAVE_AVX2)
#define SF_DISPATCH(fn, ...)                    \
  do {                                          \
    if (g_backend == Backend::kAvx2) {          \
      avx2::fn(__VA_ARGS__);                    \
    } else {                                    \
      scalar::fn(__VA_ARGS__);                  \
    }                                           \
  } while (0)
#else
#define SF_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  SF_DISPATCH(matmul, a, b, c, m, k, n);
}
template <typename T>
void vec_add(const T* a, const T* b, T* out, int64_t n) {
  SF_DISPATCH(vec_add, a, b, out, n);
}
template <typename T>
void vec_sub(const T* a, const T* b, T* out, int64_t n) {
  SF_DISPATCH(vec_sub, a, b, out, n);
}
template <typename T>
void vec_mul(const T* a, const T* b, T* out, int64_t n) {
  SF_DISPATCH(vec_mul, a, b, out, n);
}
template <typename T>
void vec_scale(const T* a, T alpha, T* out, int64_t n) {
  SF_DISPATCH(vec_scale, a, alpha, out, n);
}
template <typename T>
void vec_axpy(T alpha, const T* x, T* y, int64_t n) {
  SF_DISPATCH(vec_axpy, alpha, x, y, n);
}
template <typename T>
void vec_clamp(const T* a, T lo, T hi, T* out, int64_t n) {
  SF_DISPATCH(vec_clamp, a, lo, hi, out, n);
}

#undef SF_DISPATCH

template void matmul<float>(const float*, const float*, float*, int64_t, int64_t, int64_t);
template void matmul<double>(const double*, const double*, double*, int64_t, int64_t, int64_t);
template void vec_add<float>(const float*, const float*, float*, int64_t);
template void vec_add<double>(const double*, const double*, double*, int64_t);
template void vec_sub<float>(const float*, const float*, float*, int64_t);
template void vec_sub<double>(const double*, const double*, double*, int64_t);
template void vec_mul<float>(const float*, const float*, float*, int64_t);
template void vec_mul<double>(const double*, const double*, double*, int64_t);
template void vec_scale<float>(const float*, float, float*, int64_t);
template void vec_scale<double>(const double*, double, double*, int64_t);
template void vec_axpy<float>(float, const float*, float*, int64_t);
template void vec_axpy<double>(double, const double*, double*, int64_t);
template void vec_clamp<float>(const float*, float, float, float*, int64_t);
template void vec_clamp<double>(const double*, double, double, double*, int64_t);

}  // namespace kernels
}  // namespace slimformer
