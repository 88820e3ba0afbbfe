#ifndef SLIMFORMER_GRAPH_HPP
#define SLIMFORMER_GRAPH_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slimformer/common.hpp"
#include "slimformer/rng.hpp"
#include "slimformer/tensor.hpp"

namespace slimformer {

// Handle to a node in a Graph. Ids are local to the graph that produced them.
struct Val {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are recorded in construction order (which is a
// topological order); backward() walks them once in reverse. Stochastic nodes
// draw from a counter-based RNG keyed by (graph key, node id), so rebuilding
// the same graph with the same key replays the same noise.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph<T>&, int node_id)>;

  struct Node {
    Tensor<T> value;
    std::vector<T> grad;  // allocated on first touch during backward
    bool needs_grad = false;
    Tensor<T>* leaf = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;
    const char* name = "";
  };

  explicit Graph(RngKey rng) : rng_(rng) { nodes_.reserve(256); }

  // --- node construction -----------------------------------------------

  Val leaf(Tensor<T>* param);
  Val constant(Tensor<T> value);
  Val constant_scalar(T v) { return constant(Tensor<T>::scalar(v)); }
  Val zeros(Shape s) { return constant(Tensor<T>::zeros(std::move(s))); }

  // Uniform(0,1) draw per element, open interval; not differentiable.
  Val uniform(Shape s);

  // Generic node with a caller-supplied backward; the extension point for
  // fused losses (transducer) and anything else with a bespoke gradient.
  Val make_node(Tensor<T> value, std::vector<Val> inputs, BackwardFn backward, const char* name);

  // --- operations --------------------------------------------------------

  Val matmul(Val a, Val b);       // [m x k] * [k x n]
  Val matmul_nt(Val a, Val b);    // [m x k] * [n x k]^T -> [m x n]

  // add/sub/mul broadcast b onto a when b's shape is a trailing suffix of
  // a's shape (or b is scalar); no other broadcasting.
  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val scale(Val a, T c);

  Val sigmoid(Val a);
  Val exp(Val a);
  Val log(Val a);
  Val swish(Val a);
  Val clamp(Val a, T lo, T hi);

  Val sum(Val a);
  Val mean(Val a);
  Val softmax(Val a, int axis);
  Val layernorm(Val a, int axis, T eps = T(1e-6));
  Val l1_mean(Val a, Val b);
  Val cosine(Val a, Val b, int axis);

  Val slice(Val a, int axis, int64_t start, int64_t len);
  Val concat(const std::vector<Val>& parts, int axis);
  Val reshape(Val a, Shape s);
  Val gather_rows(Val a, std::vector<int64_t> ids);
  Val col_pick(Val a, std::vector<int64_t> ids);
  Val conv1d_depthwise(Val x, Val w, Val bias, bool causal);

  // --- execution ---------------------------------------------------------

  void backward(Val loss);

  const Tensor<T>& value(Val v) const { return node(v.id).value; }
  const Shape& shape(Val v) const { return node(v.id).value.shape; }
  // Gradient at a node after backward (zeros if the node was never reached).
  Tensor<T> grad(Val v) const;

  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Name and id of the first node holding a non-finite value, if any.
  std::optional<std::string> find_nonfinite() const;

  std::vector<T>& grad_buf(int id);
  void accumulate_grad(int id, const T* g, int64_t n);

  const RngKey& rng() const { return rng_; }

  // Zero-vector cosine slices seen by this graph (surfaced in run metrics).
  int64_t cosine_zero_count = 0;

 private:
  Val push(Node n);
  void binary_broadcast_check(Val a, Val b, const char* opname) const;

  RngKey rng_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Transpose helpers shared by ops and model surgery; out-of-place.
template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a);

}  // namespace slimformer

#endif  // SLIMFORMER_GRAPH_HPP
