#ifndef SLIMFORMER_GRAD_CHECK_HPP
#define SLIMFORMER_GRAD_CHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "slimformer/graph.hpp"

namespace slimformer {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::string detail;  // worst coordinate, or the diagnostic on failure
};

// Compares analytic gradients against central finite differences for a graph
// builder applied to the given inputs. The builder must be deterministic for
// a fixed rng key (stochastic nodes replay because node ids are stable), and
// must return a scalar loss. Relative error uses max(|analytic|, |numeric|, 0.001)
// as the denominator so near-zero gradients do not inflate the score.
template <typename T>
using GraphBuilder = std::function<Val(Graph<T>&, const std::vector<Val>&)>;

template <typename T>
GradCheckReport grad_check(const GraphBuilder<T>& build, std::vector<Tensor<T>> inputs,
                           RngKey rng, double eps = 1e-5, double tol = 1e-4);

// Variant for parameters owned by a model: the builder references them via
// g.leaf(...) itself; the harness perturbs them in place and restores them.
template <typename T>
GradCheckReport grad_check_params(const std::function<Val(Graph<T>&)>& build,
                                  const std::vector<Tensor<T>*>& params, RngKey rng,
                                  double eps = 1e-5, double tol = 1e-4);

}  // namespace slimformer

#endif  // SLIMFORMER_GRAD_CHECK_HPP
