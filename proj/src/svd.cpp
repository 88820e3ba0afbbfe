#include "slimformer/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slimformer/common.hpp"

namespace slimformer {

namespace {

// One-sided Jacobi on the columns of a tall matrix (m >= n): orthogonalize
// column pairs until all are mutually orthogonal, then read off norms.
template <typename T>
SvdResult<T> jacobi_tall(const Tensor<T>& w, int max_sweeps) {
  const int64_t m = w.dim(0), n = w.dim(1);
  Tensor<T> u = w;
  Tensor<T> v({n, n});
  for (int64_t i = 0; i < n; ++i) v.at(i, i) = T(1);

  const double tol = 1e-14;
  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        double app = 0, aqq = 0, apq = 0;
        for (int64_t i = 0; i < m; ++i) {
          const double up = u.at(i, p), uq = u.at(i, q);
          app += up * up;
          aqq += uq * uq;
          apq += up * uq;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (int64_t i = 0; i < m; ++i) {
          const double up = u.at(i, p), uq = u.at(i, q);
          u.at(i, p) = static_cast<T>(cs * up - sn * uq);
          u.at(i, q) = static_cast<T>(sn * up + cs * uq);
        }
        for (int64_t i = 0; i < n; ++i) {
          const double vp = v.at(i, p), vq = v.at(i, q);
          v.at(i, p) = static_cast<T>(cs * vp - sn * vq);
          v.at(i, q) = static_cast<T>(sn * vp + cs * vq);
        }
      }
    }
  }
  if (!converged) {
    double fro = 0;
    for (const T x : w.data) fro += static_cast<double>(x) * static_cast<double>(x);
    fail(ErrorCategory::kNumeric,
         str("jacobi_svd did not converge in ", max_sweeps, " sweeps for a ", m, "x", n,
             " matrix with Frobenius norm ", std::sqrt(fro)));
  }

  std::vector<T> sigma(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) {
    double s = 0;
    for (int64_t i = 0; i < m; ++i) s += static_cast<double>(u.at(i, j)) * u.at(i, j);
    s = std::sqrt(s);
    sigma[static_cast<size_t>(j)] = static_cast<T>(s);
    if (s > 0) {
      const T inv = static_cast<T>(1.0 / s);
      for (int64_t i = 0; i < m; ++i) u.at(i, j) *= inv;
    }
  }

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return sigma[static_cast<size_t>(a)] > sigma[static_cast<size_t>(b)]; });

  SvdResult<T> out;
  out.u = Tensor<T>({m, n});
  out.v = Tensor<T>({n, n});
  out.sigma.resize(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) {
    const int64_t src = order[static_cast<size_t>(j)];
    out.sigma[static_cast<size_t>(j)] = sigma[static_cast<size_t>(src)];
    for (int64_t i = 0; i < m; ++i) out.u.at(i, j) = u.at(i, src);
    for (int64_t i = 0; i < n; ++i) out.v.at(i, j) = v.at(i, src);
  }
  return out;
}

}  // namespace

template <typename T>
SvdResult<T> jacobi_svd(const Tensor<T>& w, int max_sweeps) {
  SF_CHECK_SHAPE(w.rank() == 2, "jacobi_svd expects a matrix, got ", shape_str(w.shape));
  const int64_t m = w.dim(0), n = w.dim(1);
  if (m >= n) return jacobi_tall(w, max_sweeps);
  // Solve the transposed problem and swap the factors.
  Tensor<T> wt({n, m});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) wt.at(j, i) = w.at(i, j);
  }
  SvdResult<T> r = jacobi_tall(wt, max_sweeps);
  SvdResult<T> out;
  out.u = std::move(r.v);
  out.v = std::move(r.u);
  out.sigma = std::move(r.sigma);
  return out;
}

template SvdResult<float> jacobi_svd<float>(const Tensor<float>&, int);
template SvdResult<double> jacobi_svd<double>(const Tensor<double>&, int);

}  // namespace slimformer
