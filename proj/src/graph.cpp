#include "slimformer/graph.hpp"

#include <algorithm>
#include <cmath>

#include "slimformer/kernels.hpp"

namespace slimformer {

namespace {

// Decomposes a shape around `axis` into (outer, len, inner) so that element
// (o, l, i) of the axis view lives at ((o * len) + l) * inner + i.
struct AxisView {
  int64_t outer = 1;
  int64_t len = 1;
  int64_t inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  v.len = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

enum class Broadcast { kSame, kScalar, kTrailing };

}  // namespace

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  SF_CHECK_SHAPE(a.rank() == 2, "transpose2d expects rank 2, got ", shape_str(a.shape));
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

// --- raw matrix products (all flops go through the dispatched kernel) ------

namespace {

template <typename T>
Tensor<T> mm(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> c({a.dim(0), b.dim(1)});
  kernels::matmul(a.data.data(), b.data.data(), c.data.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

template <typename T>
Tensor<T> mm_nt(const Tensor<T>& a, const Tensor<T>& b) {  // a * b^T
  Tensor<T> bt = transpose2d(b);
  return mm(a, bt);
}

template <typename T>
Tensor<T> mm_tn(const Tensor<T>& a, const Tensor<T>& b) {  // a^T * b
  Tensor<T> at = transpose2d(a);
  return mm(at, b);
}

}  // namespace

// --- graph plumbing ---------------------------------------------------------

template <typename T>
Val Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Val{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Val Graph<T>::leaf(Tensor<T>* param) {
  SF_CHECK_CONTRACT(param != nullptr, "leaf: null parameter");
  Node n;
  n.value = *param;  // tensors are immutable once written; copy is the contract
  n.needs_grad = param->requires_grad;
  n.leaf = param->requires_grad ? param : nullptr;
  n.name = "leaf";
  return push(std::move(n));
}

template <typename T>
Val Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.name = "const";
  return push(std::move(n));
}

template <typename T>
Val Graph<T>::uniform(Shape s) {
  Node n;
  n.value = Tensor<T>(std::move(s));
  n.name = "uniform";
  const int id = static_cast<int>(nodes_.size());
  RngKey key = rng_.derive(0x756e6966u).derive(static_cast<uint64_t>(id));
  for (size_t i = 0; i < n.value.data.size(); ++i) {
    n.value.data[i] = static_cast<T>(key.uniform_open(i));
  }
  return push(std::move(n));
}

template <typename T>
Val Graph<T>::make_node(Tensor<T> value, std::vector<Val> inputs, BackwardFn backward,
                        const char* name) {
  Node n;
  n.value = std::move(value);
  n.name = name;
  for (Val v : inputs) {
    n.inputs.push_back(v.id);
    n.needs_grad = n.needs_grad || node(v.id).needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
std::vector<T>& Graph<T>::grad_buf(int id) {
  Node& n = node(id);
  if (n.grad.size() != n.value.data.size()) n.grad.assign(n.value.data.size(), T(0));
  return n.grad;
}

template <typename T>
void Graph<T>::accumulate_grad(int id, const T* g, int64_t n) {
  if (!node(id).needs_grad) return;
  std::vector<T>& buf = grad_buf(id);
  kernels::vec_axpy(T(1), g, buf.data(), n);
}

template <typename T>
void Graph<T>::backward(Val loss) {
  SF_CHECK_CONTRACT(!backward_done_, "backward called twice on the same graph");
  SF_CHECK_CONTRACT(loss.valid() && loss.id < num_nodes(), "backward: invalid loss node");
  SF_CHECK_CONTRACT(node(loss.id).value.is_scalar(), "backward: loss must be scalar, got shape ",
                    shape_str(node(loss.id).value.shape));
  backward_done_ = true;
  grad_buf(loss.id)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.leaf != nullptr) {
      n.leaf->ensure_grad();
      kernels::vec_axpy(T(1), n.grad.data(), n.leaf->grad.data(),
                        static_cast<int64_t>(n.grad.size()));
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

template <typename T>
Tensor<T> Graph<T>::grad(Val v) const {
  const Node& n = node(v.id);
  Tensor<T> g(n.value.shape);
  if (!n.grad.empty()) g.data = n.grad;
  return g;
}

template <typename T>
std::optional<std::string> Graph<T>::find_nonfinite() const {
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.all_finite()) {
      return str("node ", i, " (", nodes_[i].name, ") holds a non-finite value");
    }
  }
  return std::nullopt;
}

// --- matmul -----------------------------------------------------------------

template <typename T>
Val Graph<T>::matmul(Val a, Val b) {
  const Tensor<T>& ta = value(a);
  const Tensor<T>& tb = value(b);
  SF_CHECK_SHAPE(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(0),
                 "matmul dimension mismatch: ", shape_str(ta.shape), " * ", shape_str(tb.shape));
  Tensor<T> out = mm(ta, tb);
  return make_node(std::move(out), {a, b},
                   [](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0], ib = n.inputs[1];
                     Tensor<T> go(n.value.shape, n.grad);
                     if (g.node(ia).needs_grad) {
                       Tensor<T> da = mm_nt(go, g.node(ib).value);
                       g.accumulate_grad(ia, da.data.data(), da.size());
                     }
                     if (g.node(ib).needs_grad) {
                       Tensor<T> db = mm_tn(g.node(ia).value, go);
                       g.accumulate_grad(ib, db.data.data(), db.size());
                     }
                   },
                   "matmul");
}

template <typename T>
Val Graph<T>::matmul_nt(Val a, Val b) {
  const Tensor<T>& ta = value(a);
  const Tensor<T>& tb = value(b);
  SF_CHECK_SHAPE(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(1),
                 "matmul_nt dimension mismatch: ", shape_str(ta.shape), " * ",
                 shape_str(tb.shape), "^T");
  Tensor<T> out = mm_nt(ta, tb);
  return make_node(std::move(out), {a, b},
                   [](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0], ib = n.inputs[1];
                     Tensor<T> go(n.value.shape, n.grad);
                     if (g.node(ia).needs_grad) {
                       Tensor<T> da = mm(go, g.node(ib).value);
                       g.accumulate_grad(ia, da.data.data(), da.size());
                     }
                     if (g.node(ib).needs_grad) {
                       Tensor<T> db = mm_tn(go, g.node(ia).value);
                       g.accumulate_grad(ib, db.data.data(), db.size());
                     }
                   },
                   "matmul_nt");
}

// --- broadcast binary ops -----------------------------------------------------

template <typename T>
void Graph<T>::binary_broadcast_check(Val a, Val b, const char* opname) const {
  const Shape& sa = value(a).shape;
  const Shape& sb = value(b).shape;
  SF_CHECK_SHAPE(trailing_broadcastable(sa, sb), opname, ": shape ", shape_str(sb),
                 " does not broadcast onto ", shape_str(sa));
}

namespace {

template <typename T, typename FwdBlock, typename BwdA, typename BwdB>
Val broadcast_binary(Graph<T>& g, Val a, Val b, const char* name, FwdBlock fwd, BwdA bwd_a,
                     BwdB bwd_b) {
  const Tensor<T>& ta = g.value(a);
  const Tensor<T>& tb = g.value(b);
  const int64_t bn = tb.size();
  const int64_t total = ta.size();
  Tensor<T> out(ta.shape);
  for (int64_t off = 0; off < total; off += bn) {
    fwd(ta.data.data() + off, tb.data.data(), out.data.data() + off, bn);
  }
  return g.make_node(
      std::move(out), {a, b},
      [bwd_a, bwd_b](Graph<T>& gg, int id) {
        auto& n = gg.node(id);
        const int ia = n.inputs[0], ib = n.inputs[1];
        const Tensor<T>& va = gg.node(ia).value;
        const Tensor<T>& vb = gg.node(ib).value;
        const int64_t bn2 = vb.size();
        const int64_t total2 = va.size();
        if (gg.node(ia).needs_grad) {
          std::vector<T>& da = gg.grad_buf(ia);
          for (int64_t off = 0; off < total2; off += bn2) {
            bwd_a(n.grad.data() + off, va.data.data() + off, vb.data.data(), da.data() + off, bn2);
          }
        }
        if (gg.node(ib).needs_grad) {
          std::vector<T>& db = gg.grad_buf(ib);
          for (int64_t off = 0; off < total2; off += bn2) {
            bwd_b(n.grad.data() + off, va.data.data() + off, vb.data.data(), db.data(), bn2);
          }
        }
      },
      name);
}

}  // namespace

template <typename T>
Val Graph<T>::add(Val a, Val b) {
  binary_broadcast_check(a, b, "add");
  return broadcast_binary<T>(
      *this, a, b, "add",
      [](const T* x, const T* y, T* o, int64_t n) { kernels::vec_add(x, y, o, n); },
      [](const T* go, const T*, const T*, T* da, int64_t n) { kernels::vec_axpy(T(1), go, da, n); },
      [](const T* go, const T*, const T*, T* db, int64_t n) { kernels::vec_axpy(T(1), go, db, n); });
}

template <typename T>
Val Graph<T>::sub(Val a, Val b) {
  binary_broadcast_check(a, b, "sub");
  return broadcast_binary<T>(
      *this, a, b, "sub",
      [](const T* x, const T* y, T* o, int64_t n) { kernels::vec_sub(x, y, o, n); },
      [](const T* go, const T*, const T*, T* da, int64_t n) { kernels::vec_axpy(T(1), go, da, n); },
      [](const T* go, const T*, const T*, T* db, int64_t n) { kernels::vec_axpy(T(-1), go, db, n); });
}

template <typename T>
Val Graph<T>::mul(Val a, Val b) {
  binary_broadcast_check(a, b, "mul");
  return broadcast_binary<T>(
      *this, a, b, "mul",
      [](const T* x, const T* y, T* o, int64_t n) { kernels::vec_mul(x, y, o, n); },
      [](const T* go, const T*, const T* y, T* da, int64_t n) {
        for (int64_t i = 0; i < n; ++i) da[i] += go[i] * y[i];
      },
      [](const T* go, const T* x, const T*, T* db, int64_t n) {
        for (int64_t i = 0; i < n; ++i) db[i] += go[i] * x[i];
      });
}

template <typename T>
Val Graph<T>::scale(Val a, T c) {
  const Tensor<T>& ta = value(a);
  Tensor<T> out(ta.shape);
  kernels::vec_scale(ta.data.data(), c, out.data.data(), ta.size());
  return make_node(std::move(out), {a},
                   [c](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     std::vector<T>& da = g.grad_buf(ia);
                     kernels::vec_axpy(c, n.grad.data(), da.data(),
                                       static_cast<int64_t>(n.grad.size()));
                   },
                   "scale");
}

// --- pointwise unary ----------------------------------------------------------

namespace {

template <typename T, typename Fwd, typename Bwd>
Val unary_pointwise(Graph<T>& g, Val a, const char* name, Fwd fwd, Bwd bwd) {
  const Tensor<T>& ta = g.value(a);
  Tensor<T> out(ta.shape);
  for (int64_t i = 0; i < ta.size(); ++i) out.at(i) = fwd(ta.at(i));
  return g.make_node(std::move(out), {a},
                     [bwd](Graph<T>& gg, int id) {
                       auto& n = gg.node(id);
                       const int ia = n.inputs[0];
                       if (!gg.node(ia).needs_grad) return;
                       const Tensor<T>& x = gg.node(ia).value;
                       std::vector<T>& da = gg.grad_buf(ia);
                       for (int64_t i = 0; i < x.size(); ++i) {
                         da[static_cast<size_t>(i)] += n.grad[static_cast<size_t>(i)] *
                                                       bwd(x.at(i), n.value.at(i));
                       }
                     },
                     name);
}

template <typename T>
T sigmoid_scalar(T x) {
  // Split on sign for stability in both tails.
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Val Graph<T>::sigmoid(Val a) {
  return unary_pointwise<T>(
      *this, a, "sigmoid", [](T x) { return sigmoid_scalar(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Val Graph<T>::exp(Val a) {
  return unary_pointwise<T>(
      *this, a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Val Graph<T>::log(Val a) {
  const Tensor<T>& ta = value(a);
  for (int64_t i = 0; i < ta.size(); ++i) {
    SF_CHECK(ta.at(i) > T(0), ErrorCategory::kDomain,
             "log of non-positive entry ", static_cast<double>(ta.at(i)), " at flat index ", i);
  }
  return unary_pointwise<T>(
      *this, a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Val Graph<T>::swish(Val a) {
  return unary_pointwise<T>(
      *this, a, "swish", [](T x) { return x * sigmoid_scalar(x); },
      [](T x, T) {
        T s = sigmoid_scalar(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Val Graph<T>::clamp(Val a, T lo, T hi) {
  SF_CHECK_CONTRACT(lo < hi, "clamp: lo must be < hi");
  const Tensor<T>& ta = value(a);
  Tensor<T> out(ta.shape);
  kernels::vec_clamp(ta.data.data(), lo, hi, out.data.data(), ta.size());
  return make_node(std::move(out), {a},
                   [lo, hi](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     const Tensor<T>& x = g.node(ia).value;
                     std::vector<T>& da = g.grad_buf(ia);
                     // Gradient passes only on the open interior (lo, hi).
                     for (int64_t i = 0; i < x.size(); ++i) {
                       if (x.at(i) > lo && x.at(i) < hi) {
                         da[static_cast<size_t>(i)] += n.grad[static_cast<size_t>(i)];
                       }
                     }
                   },
                   "clamp");
}

// --- reductions and normalizations ---------------------------------------------

template <typename T>
Val Graph<T>::sum(Val a) {
  const Tensor<T>& ta = value(a);
  T acc = T(0);
  for (int64_t i = 0; i < ta.size(); ++i) acc += ta.at(i);
  return make_node(Tensor<T>::scalar(acc), {a},
                   [](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     const T g0 = n.grad[0];
                     std::vector<T>& da = g.grad_buf(ia);
                     for (T& v : da) v += g0;
                   },
                   "sum");
}

template <typename T>
Val Graph<T>::mean(Val a) {
  const Tensor<T>& ta = value(a);
  SF_CHECK_CONTRACT(ta.size() > 0, "mean of empty tensor");
  T acc = T(0);
  for (int64_t i = 0; i < ta.size(); ++i) acc += ta.at(i);
  const T inv = T(1) / static_cast<T>(ta.size());
  return make_node(Tensor<T>::scalar(acc * inv), {a},
                   [inv](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     const T g0 = n.grad[0] * inv;
                     std::vector<T>& da = g.grad_buf(ia);
                     for (T& v : da) v += g0;
                   },
                   "mean");
}

template <typename T>
Val Graph<T>::softmax(Val a, int axis) {
  const Tensor<T>& ta = value(a);
  const int ax = normalize_axis(axis, ta.shape.size());
  const AxisView v = axis_view(ta.shape, ax);
  Tensor<T> out(ta.shape);
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.len * v.inner + in;
      T mx = ta.at(base);
      for (int64_t l = 1; l < v.len; ++l) mx = std::max(mx, ta.at(base + l * v.inner));
      T denom = T(0);
      for (int64_t l = 0; l < v.len; ++l) {
        T e = std::exp(ta.at(base + l * v.inner) - mx);
        out.at(base + l * v.inner) = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (int64_t l = 0; l < v.len; ++l) out.at(base + l * v.inner) *= inv;
    }
  }
  return make_node(std::move(out), {a},
                   [v](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     std::vector<T>& da = g.grad_buf(ia);
                     for (int64_t o = 0; o < v.outer; ++o) {
                       for (int64_t in = 0; in < v.inner; ++in) {
                         const int64_t base = o * v.len * v.inner + in;
                         T dot = T(0);
                         for (int64_t l = 0; l < v.len; ++l) {
                           const int64_t ix = base + l * v.inner;
                           dot += n.grad[static_cast<size_t>(ix)] * n.value.at(ix);
                         }
                         for (int64_t l = 0; l < v.len; ++l) {
                           const int64_t ix = base + l * v.inner;
                           da[static_cast<size_t>(ix)] +=
                               n.value.at(ix) * (n.grad[static_cast<size_t>(ix)] - dot);
                         }
                       }
                     }
                   },
                   "softmax");
}

template <typename T>
Val Graph<T>::layernorm(Val a, int axis, T eps) {
  const Tensor<T>& ta = value(a);
  const int ax = normalize_axis(axis, ta.shape.size());
  const AxisView v = axis_view(ta.shape, ax);
  Tensor<T> out(ta.shape);
  std::vector<T> inv_sigma(static_cast<size_t>(v.outer * v.inner));
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.len * v.inner + in;
      T mu = T(0);
      for (int64_t l = 0; l < v.len; ++l) mu += ta.at(base + l * v.inner);
      mu /= static_cast<T>(v.len);
      T var = T(0);
      for (int64_t l = 0; l < v.len; ++l) {
        T d = ta.at(base + l * v.inner) - mu;
        var += d * d;
      }
      var /= static_cast<T>(v.len);
      const T is = T(1) / std::sqrt(var + eps);
      inv_sigma[static_cast<size_t>(o * v.inner + in)] = is;
      for (int64_t l = 0; l < v.len; ++l) {
        out.at(base + l * v.inner) = (ta.at(base + l * v.inner) - mu) * is;
      }
    }
  }
  return make_node(
      std::move(out), {a},
      [v, inv_sigma](Graph<T>& g, int id) {
        auto& n = g.node(id);
        const int ia = n.inputs[0];
        if (!g.node(ia).needs_grad) return;
        std::vector<T>& da = g.grad_buf(ia);
        const T invlen = T(1) / static_cast<T>(v.len);
        for (int64_t o = 0; o < v.outer; ++o) {
          for (int64_t in = 0; in < v.inner; ++in) {
            const int64_t base = o * v.len * v.inner + in;
            const T is = inv_sigma[static_cast<size_t>(o * v.inner + in)];
            T gmean = T(0), gymean = T(0);
            for (int64_t l = 0; l < v.len; ++l) {
              const int64_t ix = base + l * v.inner;
              gmean += n.grad[static_cast<size_t>(ix)];
              gymean += n.grad[static_cast<size_t>(ix)] * n.value.at(ix);
            }
            gmean *= invlen;
            gymean *= invlen;
            for (int64_t l = 0; l < v.len; ++l) {
              const int64_t ix = base + l * v.inner;
              da[static_cast<size_t>(ix)] +=
                  is * (n.grad[static_cast<size_t>(ix)] - gmean - n.value.at(ix) * gymean);
            }
          }
        }
      },
      "layernorm");
}

template <typename T>
Val Graph<T>::l1_mean(Val a, Val b) {
  const Tensor<T>& ta = value(a);
  const Tensor<T>& tb = value(b);
  SF_CHECK_SHAPE(ta.shape == tb.shape, "l1_mean shape mismatch ", shape_str(ta.shape), " vs ",
                 shape_str(tb.shape));
  T acc = T(0);
  for (int64_t i = 0; i < ta.size(); ++i) acc += std::abs(ta.at(i) - tb.at(i));
  const T inv = T(1) / static_cast<T>(ta.size());
  return make_node(Tensor<T>::scalar(acc * inv), {a, b},
                   [inv](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0], ib = n.inputs[1];
                     const Tensor<T>& x = g.node(ia).value;
                     const Tensor<T>& y = g.node(ib).value;
                     const T g0 = n.grad[0] * inv;
                     const bool na = g.node(ia).needs_grad, nb = g.node(ib).needs_grad;
                     std::vector<T>* da = na ? &g.grad_buf(ia) : nullptr;
                     std::vector<T>* db = nb ? &g.grad_buf(ib) : nullptr;
                     for (int64_t i = 0; i < x.size(); ++i) {
                       const T d = x.at(i) - y.at(i);
                       const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                       if (na) (*da)[static_cast<size_t>(i)] += g0 * s;
                       if (nb) (*db)[static_cast<size_t>(i)] -= g0 * s;
                     }
                   },
                   "l1_mean");
}

template <typename T>
Val Graph<T>::cosine(Val a, Val b, int axis) {
  const Tensor<T>& ta = value(a);
  const Tensor<T>& tb = value(b);
  SF_CHECK_SHAPE(ta.shape == tb.shape, "cosine shape mismatch ", shape_str(ta.shape), " vs ",
                 shape_str(tb.shape));
  const int ax = normalize_axis(axis, ta.shape.size());
  const AxisView v = axis_view(ta.shape, ax);
  Shape out_shape;
  for (int i = 0; i < ta.rank(); ++i) {
    if (i != ax) out_shape.push_back(ta.dim(i));
  }
  if (out_shape.empty()) out_shape = {1};
  Tensor<T> out(out_shape);
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.len * v.inner + in;
      T dot = T(0), na2 = T(0), nb2 = T(0);
      for (int64_t l = 0; l < v.len; ++l) {
        const T xa = ta.at(base + l * v.inner);
        const T xb = tb.at(base + l * v.inner);
        dot += xa * xb;
        na2 += xa * xa;
        nb2 += xb * xb;
      }
      T c;
      if (na2 == T(0) || nb2 == T(0)) {
        // Zero vectors get similarity 0 rather than an error; counted so the
        // training loop can surface how often it happened.
        c = T(0);
        ++cosine_zero_count;
      } else {
        // sqrt(na2*nb2) rather than sqrt(na2)*sqrt(nb2): for identical inputs
        // the quotient is then exactly 1 and the gradient cancels exactly.
        c = dot / std::sqrt(na2 * nb2);
      }
      out.at(o * v.inner + in) = c;
    }
  }
  return make_node(
      std::move(out), {a, b},
      [v](Graph<T>& g, int id) {
        auto& n = g.node(id);
        const int ia = n.inputs[0], ib = n.inputs[1];
        const Tensor<T>& x = g.node(ia).value;
        const Tensor<T>& y = g.node(ib).value;
        const bool na = g.node(ia).needs_grad, nb = g.node(ib).needs_grad;
        std::vector<T>* da = na ? &g.grad_buf(ia) : nullptr;
        std::vector<T>* db = nb ? &g.grad_buf(ib) : nullptr;
        for (int64_t o = 0; o < v.outer; ++o) {
          for (int64_t in = 0; in < v.inner; ++in) {
            const int64_t base = o * v.len * v.inner + in;
            const T go = n.grad[static_cast<size_t>(o * v.inner + in)];
            if (go == T(0)) continue;
            T dot = T(0), na2 = T(0), nb2 = T(0);
            for (int64_t l = 0; l < v.len; ++l) {
              const T xa = x.at(base + l * v.inner);
              const T xb = y.at(base + l * v.inner);
              dot += xa * xb;
              na2 += xa * xa;
              nb2 += xb * xb;
            }
            if (na2 == T(0) || nb2 == T(0)) continue;  // flat zero-similarity region
            const T denom = std::sqrt(na2 * nb2);
            const T c = dot / denom;
            for (int64_t l = 0; l < v.len; ++l) {
              const int64_t ix = base + l * v.inner;
              if (na) {
                (*da)[static_cast<size_t>(ix)] +=
                    go * (y.at(ix) / denom - c * x.at(ix) / na2);
              }
              if (nb) {
                (*db)[static_cast<size_t>(ix)] +=
                    go * (x.at(ix) / denom - c * y.at(ix) / nb2);
              }
            }
          }
        }
      },
      "cosine");
}

// --- structural ops -----------------------------------------------------------

template <typename T>
Val Graph<T>::slice(Val a, int axis, int64_t start, int64_t len) {
  const Tensor<T>& ta = value(a);
  const int ax = normalize_axis(axis, ta.shape.size());
  SF_CHECK_SHAPE(start >= 0 && len >= 1 && start + len <= ta.dim(ax), "slice [", start, ", ",
                 start + len, ") out of range for axis ", ax, " of ", shape_str(ta.shape));
  const AxisView v = axis_view(ta.shape, ax);
  Shape out_shape = ta.shape;
  out_shape[static_cast<size_t>(ax)] = len;
  Tensor<T> out(out_shape);
  for (int64_t o = 0; o < v.outer; ++o) {
    for (int64_t l = 0; l < len; ++l) {
      const T* src = ta.data.data() + (o * v.len + start + l) * v.inner;
      T* dst = out.data.data() + (o * len + l) * v.inner;
      std::copy(src, src + v.inner, dst);
    }
  }
  return make_node(std::move(out), {a},
                   [v, start, len](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     std::vector<T>& da = g.grad_buf(ia);
                     for (int64_t o = 0; o < v.outer; ++o) {
                       for (int64_t l = 0; l < len; ++l) {
                         const T* src = n.grad.data() + (o * len + l) * v.inner;
                         T* dst = da.data() + (o * v.len + start + l) * v.inner;
                         kernels::vec_axpy(T(1), src, dst, v.inner);
                       }
                     }
                   },
                   "slice");
}

template <typename T>
Val Graph<T>::concat(const std::vector<Val>& parts, int axis) {
  SF_CHECK_CONTRACT(!parts.empty(), "concat of zero parts");
  const Tensor<T>& first = value(parts[0]);
  const int ax = normalize_axis(axis, first.shape.size());
  Shape out_shape = first.shape;
  int64_t total_len = 0;
  for (Val p : parts) {
    const Shape& s = value(p).shape;
    SF_CHECK_SHAPE(s.size() == out_shape.size(), "concat rank mismatch");
    for (size_t i = 0; i < s.size(); ++i) {
      SF_CHECK_SHAPE(static_cast<int>(i) == ax || s[i] == out_shape[i],
                     "concat shape mismatch on axis ", i);
    }
    total_len += s[static_cast<size_t>(ax)];
  }
  out_shape[static_cast<size_t>(ax)] = total_len;
  const AxisView vo = axis_view(out_shape, ax);
  Tensor<T> out(out_shape);
  std::vector<int64_t> lens;
  int64_t cursor = 0;
  for (Val p : parts) {
    const Tensor<T>& tp = value(p);
    const int64_t plen = tp.dim(ax);
    lens.push_back(plen);
    for (int64_t o = 0; o < vo.outer; ++o) {
      for (int64_t l = 0; l < plen; ++l) {
        const T* src = tp.data.data() + (o * plen + l) * vo.inner;
        T* dst = out.data.data() + (o * vo.len + cursor + l) * vo.inner;
        std::copy(src, src + vo.inner, dst);
      }
    }
    cursor += plen;
  }
  return make_node(std::move(out), parts,
                   [vo, lens](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     int64_t cur = 0;
                     for (size_t pi = 0; pi < n.inputs.size(); ++pi) {
                       const int ip = n.inputs[pi];
                       const int64_t plen = lens[pi];
                       if (g.node(ip).needs_grad) {
                         std::vector<T>& dp = g.grad_buf(ip);
                         for (int64_t o = 0; o < vo.outer; ++o) {
                           for (int64_t l = 0; l < plen; ++l) {
                             const T* src = n.grad.data() + (o * vo.len + cur + l) * vo.inner;
                             T* dst = dp.data() + (o * plen + l) * vo.inner;
                             kernels::vec_axpy(T(1), src, dst, vo.inner);
                           }
                         }
                       }
                       cur += plen;
                     }
                   },
                   "concat");
}

template <typename T>
Val Graph<T>::reshape(Val a, Shape s) {
  const Tensor<T>& ta = value(a);
  SF_CHECK_SHAPE(numel(s) == ta.size(), "reshape ", shape_str(ta.shape), " -> ", shape_str(s),
                 " changes element count");
  Tensor<T> out(std::move(s), ta.data);
  return make_node(std::move(out), {a},
                   [](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     g.accumulate_grad(ia, n.grad.data(), static_cast<int64_t>(n.grad.size()));
                   },
                   "reshape");
}

template <typename T>
Val Graph<T>::gather_rows(Val a, std::vector<int64_t> ids) {
  const Tensor<T>& ta = value(a);
  SF_CHECK_SHAPE(ta.rank() == 2, "gather_rows expects rank 2, got ", shape_str(ta.shape));
  const int64_t rows = ta.dim(0), cols = ta.dim(1);
  for (int64_t id : ids) {
    SF_CHECK_CONTRACT(id >= 0 && id < rows, "gather_rows: index ", id, " out of range [0, ", rows,
                      ")");
  }
  Tensor<T> out({static_cast<int64_t>(ids.size()), cols});
  for (size_t i = 0; i < ids.size(); ++i) {
    const T* src = ta.data.data() + ids[i] * cols;
    std::copy(src, src + cols, out.data.data() + static_cast<int64_t>(i) * cols);
  }
  return make_node(std::move(out), {a},
                   [ids, cols](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     std::vector<T>& da = g.grad_buf(ia);
                     for (size_t i = 0; i < ids.size(); ++i) {
                       const T* src = n.grad.data() + static_cast<int64_t>(i) * cols;
                       kernels::vec_axpy(T(1), src, da.data() + ids[i] * cols, cols);
                     }
                   },
                   "gather_rows");
}

template <typename T>
Val Graph<T>::col_pick(Val a, std::vector<int64_t> ids) {
  const Tensor<T>& ta = value(a);
  SF_CHECK_SHAPE(ta.rank() == 2, "col_pick expects rank 2, got ", shape_str(ta.shape));
  const int64_t rows = ta.dim(0), cols = ta.dim(1);
  SF_CHECK_CONTRACT(static_cast<int64_t>(ids.size()) == rows, "col_pick: need one index per row");
  for (int64_t id : ids) {
    SF_CHECK_CONTRACT(id >= 0 && id < cols, "col_pick: index ", id, " out of range [0, ", cols,
                      ")");
  }
  Tensor<T> out({rows});
  for (int64_t i = 0; i < rows; ++i) out.at(i) = ta.at(i, ids[static_cast<size_t>(i)]);
  return make_node(std::move(out), {a},
                   [ids, cols](Graph<T>& g, int id) {
                     auto& n = g.node(id);
                     const int ia = n.inputs[0];
                     if (!g.node(ia).needs_grad) return;
                     std::vector<T>& da = g.grad_buf(ia);
                     for (size_t i = 0; i < ids.size(); ++i) {
                       da[i * static_cast<size_t>(cols) + static_cast<size_t>(ids[i])] +=
                           n.grad[i];
                     }
                   },
                   "col_pick");
}

template <typename T>
Val Graph<T>::conv1d_depthwise(Val x, Val w, Val bias, bool causal) {
  const Tensor<T>& tx = value(x);
  const Tensor<T>& tw = value(w);
  SF_CHECK_SHAPE(tx.rank() == 2 && tw.rank() == 2 && tx.dim(1) == tw.dim(0),
                 "conv1d_depthwise: x ", shape_str(tx.shape), " vs kernel ", shape_str(tw.shape));
  const int64_t steps = tx.dim(0), ch = tx.dim(1), k = tw.dim(1);
  SF_CHECK_CONTRACT(causal || (k % 2 == 1), "non-causal depthwise conv needs an odd kernel");
  const int64_t pad_left = causal ? k - 1 : (k - 1) / 2;
  const bool has_bias = bias.valid();
  if (has_bias) {
    SF_CHECK_SHAPE(value(bias).size() == ch, "conv bias length mismatch");
  }
  Tensor<T> out({steps, ch});
  for (int64_t t = 0; t < steps; ++t) {
    for (int64_t c = 0; c < ch; ++c) {
      T acc = has_bias ? value(bias).at(c) : T(0);
      for (int64_t j = 0; j < k; ++j) {
        const int64_t s = t + j - pad_left;
        if (s >= 0 && s < steps) acc += tx.at(s, c) * tw.at(c, j);
      }
      out.at(t, c) = acc;
    }
  }
  std::vector<Val> inputs = {x, w};
  if (has_bias) inputs.push_back(bias);
  return make_node(
      std::move(out), inputs,
      [pad_left, k, has_bias](Graph<T>& g, int id) {
        auto& n = g.node(id);
        const int ix = n.inputs[0], iw = n.inputs[1];
        const Tensor<T>& xv = g.node(ix).value;
        const Tensor<T>& wv = g.node(iw).value;
        const int64_t steps = xv.dim(0), ch = xv.dim(1);
        if (g.node(ix).needs_grad) {
          std::vector<T>& dx = g.grad_buf(ix);
          for (int64_t t = 0; t < steps; ++t) {
            for (int64_t c = 0; c < ch; ++c) {
              const T go = n.grad[static_cast<size_t>(t * ch + c)];
              if (go == T(0)) continue;
              for (int64_t j = 0; j < k; ++j) {
                const int64_t s = t + j - pad_left;
                if (s >= 0 && s < steps) {
                  dx[static_cast<size_t>(s * ch + c)] += go * wv.at(c, j);
                }
              }
            }
          }
        }
        if (g.node(iw).needs_grad) {
          std::vector<T>& dw = g.grad_buf(iw);
          for (int64_t t = 0; t < steps; ++t) {
            for (int64_t c = 0; c < ch; ++c) {
              const T go = n.grad[static_cast<size_t>(t * ch + c)];
              if (go == T(0)) continue;
              for (int64_t j = 0; j < k; ++j) {
                const int64_t s = t + j - pad_left;
                if (s >= 0 && s < steps) {
                  dw[static_cast<size_t>(c * k + j)] += go * xv.at(s, c);
                }
              }
            }
          }
        }
        if (has_bias && g.node(n.inputs[2]).needs_grad) {
          std::vector<T>& db = g.grad_buf(n.inputs[2]);
          for (int64_t t = 0; t < steps; ++t) {
            for (int64_t c = 0; c < ch; ++c) {
              db[static_cast<size_t>(c)] += n.grad[static_cast<size_t>(t * ch + c)];
            }
          }
        }
      },
      "conv1d_depthwise");
}

template class Graph<float>;
template class Graph<double>;
template Tensor<float> transpose2d<float>(const Tensor<float>&);
template Tensor<double> transpose2d<double>(const Tensor<double>&);

}  // namespace slimformer
