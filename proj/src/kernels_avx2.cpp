// AVX2 kernel variants. This translation unit is compiled with -mavx2; the
// dispatcher only calls into it after a runtime CPU check. Each kernel mirrors
// the scalar reference exactly: same accumulation order, mul followed by add
// (no FMA), so results are bit-identical for finite inputs.

#if defined(SLIMFORMER_HAVE_AVX2)

#include <immintrin.h>

#include <cstdint>
#include <cstring>

namespace slimformer {
namespace kernels {
namespace avx2 {

// ----- double, 4 lanes -----

void matmul_d(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  const int64_t nv = n - (n % 4);
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::memset(crow, 0, static_cast<size_t>(n) * sizeof(double));
    const double* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const __m256d av = _mm256_set1_pd(arow[kk]);
      const double* brow = b + kk * n;
      int64_t j = 0;
      for (; j < nv; j += 4) {
        __m256d cv = _mm256_loadu_pd(crow + j);
        __m256d bv = _mm256_loadu_pd(brow + j);
        cv = _mm256_add_pd(cv, _mm256_mul_pd(av, bv));
        _mm256_storeu_pd(crow + j, cv);
      }
      const double aik = arow[kk];
      for (; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

void matmul_f(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
  const int64_t nv = n - (n % 8);
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    std::memset(crow, 0, static_cast<size_t>(n) * sizeof(float));
    const float* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const __m256 av = _mm256_set1_ps(arow[kk]);
      const float* brow = b + kk * n;
      int64_t j = 0;
      for (; j < nv; j += 8) {
        __m256 cv = _mm256_loadu_ps(crow + j);
        __m256 bv = _mm256_loadu_ps(brow + j);
        cv = _mm256_add_ps(cv, _mm256_mul_ps(av, bv));
        _mm256_storeu_ps(crow + j, cv);
      }
      const float aik = arow[kk];
      for (; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

#define SF_AVX2_BINARY(name, vop_d, vop_s, sop)                            \
  void name##_d(const double* a, const double* b, double* out, int64_t n) { \
    int64_t i = 0;                                                          \
    for (; i + 4 <= n; i += 4) {                                            \
      _mm256_storeu_pd(out + i, vop_d(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i))); \
    }                                                                       \
    for (; i < n; ++i) out[i] = a[i] sop b[i];                              \
  }                                                                         \
  void name##_f(const float* a, const float* b, float* out, int64_t n) {    \
    int64_t i = 0;                                                          \
    for (; i + 8 <= n; i += 8) {                                            \
      _mm256_storeu_ps(out + i, vop_s(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i))); \
    }                                                                       \
    for (; i < n; ++i) out[i] = a[i] sop b[i];                              \
  }

SF_AVX2_BINARY(vec_add, _mm256_add_pd, _mm256_add_ps, +)
SF_AVX2_BINARY(vec_sub, _mm256_sub_pd, _mm256_sub_ps, -)
SF_AVX2_BINARY(vec_mul, _mm256_mul_pd, _mm256_mul_ps, *)

#undef SF_AVX2_BINARY

void vec_scale_d(const double* a, double alpha, double* out, int64_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), av));
  }
  for (; i < n; ++i) out[i] = a[i] * alpha;
}

void vec_scale_f(const float* a, float alpha, float* out, int64_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), av));
  }
  for (; i < n; ++i) out[i] = a[i] * alpha;
}

void vec_axpy_d(double alpha, const double* x, double* y, int64_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_loadu_pd(y + i);
    yv = _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void vec_axpy_f(float alpha, const float* x, float* y, int64_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_loadu_ps(y + i);
    yv = _mm256_add_ps(yv, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
    _mm256_storeu_ps(y + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void vec_clamp_d(const double* a, double lo, double hi, double* out, int64_t n) {
  const __m256d lov = _mm256_set1_pd(lo);
  const __m256d hiv = _mm256_set1_pd(hi);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_max_pd(_mm256_loadu_pd(a + i), lov);
    _mm256_storeu_pd(out + i, _mm256_min_pd(v, hiv));
  }
  for (; i < n; ++i) {
    double v = a[i] < lo ? lo : a[i];
    out[i] = v > hi ? hi : v;
  }
}

void vec_clamp_f(const float* a, float lo, float hi, float* out, int64_t n) {
  const __m256 lov = _mm256_set1_ps(lo);
  const __m256 hiv = _mm256_set1_ps(hi);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_max_ps(_mm256_loadu_ps(a + i), lov);
    _mm256_storeu_ps(out + i, _mm256_min_ps(v, hiv));
  }
  for (; i < n; ++i) {
    float v = a[i] < lo ? lo : a[i];
    out[i] = v > hi ? hi : v;
  }
}

// Template front so the dispatcher can name one entry point per kernel.

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);
template <>
void matmul<double>(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  matmul_d(a, b, c, m, k, n);
}
template <>
void matmul<float>(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
  matmul_f(a, b, c, m, k, n);
}

#define SF_AVX2_FRONT2(name)                                               \
  template <typename T>                                                    \
  void name(const T* a, const T* b, T* out, int64_t n);                    \
  template <>                                                              \
  void name<double>(const double* a, const double* b, double* out, int64_t n) { \
    name##_d(a, b, out, n);                                                \
  }                                                                        \
  template <>                                                              \
  void name<float>(const float* a, const float* b, float* out, int64_t n) { \
    name##_f(a, b, out, n);                                                \
  }

SF_AVX2_FRONT2(vec_add)
SF_AVX2_FRONT2(vec_sub)
SF_AVX2_FRONT2(vec_mul)
#undef SF_AVX2_FRONT2

template <typename T>
void vec_scale(const T* a, T alpha, T* out, int64_t n);
template <>
void vec_scale<double>(const double* a, double alpha, double* out, int64_t n) {
  vec_scale_d(a, alpha, out, n);
}
template <>
void vec_scale<float>(const float* a, float alpha, float* out, int64_t n) {
  vec_scale_f(a, alpha, out, n);
}

template <typename T>
void vec_axpy(T alpha, const T* x, T* y, int64_t n);
template <>
void vec_axpy<double>(double alpha, const double* x, double* y, int64_t n) {
  vec_axpy_d(alpha, x, y, n);
}
template <>
void vec_axpy<float>(float alpha, const float* x, float* y, int64_t n) {
  vec_axpy_f(alpha, x, y, n);
}

template <typename T>
void vec_clamp(const T* a, T lo, T hi, T* out, int64_t n);
template <>
void vec_clamp<double>(const double* a, double lo, double hi, double* out, int64_t n) {
  vec_clamp_d(a, lo, hi, out, n);
}
template <>
void vec_clamp<float>(const float* a, float lo, float hi, float* out, int64_t n) {
  vec_clamp_f(a, lo, hi, out, n);
}

}  // namespace avx2
}  // namespace kernels
}  // namespace slimformer

#endif  // SLIMFORMER_HAVE_AVX2
