#ifndef SLIMFORMER_KERNELS_HPP
#define SLIMFORMER_KERNELS_HPP

#include <cstdint>
#include <string>

namespace slimformer {
namespace kernels {

// Data-parallel inner loops behind the tensor ops. Every kernel has a scalar
// reference implementation and, on x86 with AVX2, a vector variant selected at
// runtime. The vector variants are written to be bit-identical to the scalar
// reference for finite inputs: matmul accumulates in the same order per output
// element (mul then add, no FMA), and the pointwise kernels are lane-wise maps
// of the same scalar expressions. Reductions and transcendentals stay scalar
// in the op layer so results do not depend on the selected backend.

enum class Backend {
  kAuto,    // pick the best variant the CPU supports
  kScalar,  // force the reference kernels
  kAvx2,    // force AVX2 (error if unsupported)
};

bool cpu_has_avx2();

// Selects the backend for all subsequent kernel calls. Not thread-safe;
// call before spawning any computation.
void set_backend(Backend b);
Backend active_backend();          // resolved: never kAuto
std::string backend_name();        // "scalar" or "avx2"
Backend parse_backend(const std::string& name);

// C[m x n] = A[m x k] * B[k x n], row-major, C fully overwritten.
template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

template <typename T>
void vec_add(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void vec_sub(const T* a, const T* b, T* out, int64_t n);
template <typename T>
void vec_mul(const T* a, const T* b, T* out, int64_t n);
// out = a * alpha
template <typename T>
void vec_scale(const T* a, T alpha, T* out, int64_t n);
// y += alpha * x
template <typename T>
void vec_axpy(T alpha, const T* x, T* y, int64_t n);
// out = min(max(a, lo), hi)
template <typename T>
void vec_clamp(const T* a, T lo, T hi, T* out, int64_t n);

// Reference implementations, exposed for equivalence tests.
namespace scalar {
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
}  // namespace scalar

}  // namespace kernels
}  // namespace slimformer

#endif  // SLIMFORMER_KERNELS_HPP
