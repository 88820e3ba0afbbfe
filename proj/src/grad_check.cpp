#include "slimformer/grad_check.hpp"

#include <cmath>
#include <limits>

namespace slimformer {

namespace {

template <typename T>
double run_forward(const GraphBuilder<T>& build, std::vector<Tensor<T>>& inputs, RngKey rng) {
  Graph<T> g(rng);
  std::vector<Val> leaves;
  leaves.reserve(inputs.size());
  for (auto& t : inputs) leaves.push_back(g.leaf(&t));
  Val loss = build(g, leaves);
  SF_CHECK_CONTRACT(g.value(loss).is_scalar(), "grad_check: builder must return a scalar loss");
  return static_cast<double>(g.value(loss).at(0));
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const GraphBuilder<T>& build, std::vector<Tensor<T>> inputs, RngKey rng,
                           double eps, double tol) {
  GradCheckReport report;

  for (auto& t : inputs) {
    t.requires_grad = true;
    t.zero_grad();
    t.ensure_grad();
  }

  // Analytic pass.
  {
    Graph<T> g(rng);
    std::vector<Val> leaves;
    for (auto& t : inputs) leaves.push_back(g.leaf(&t));
    Val loss = build(g, leaves);
    SF_CHECK_CONTRACT(g.value(loss).is_scalar(), "grad_check: builder must return a scalar loss");
    g.backward(loss);
    if (auto bad = g.find_nonfinite()) {
      report.pass = false;
      report.max_rel_err = std::numeric_limits<double>::infinity();
      report.detail = "non-finite forward value: " + *bad;
      return report;
    }
  }

  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    for (int64_t i = 0; i < inputs[ti].size(); ++i) {
      const T saved = inputs[ti].at(i);
      inputs[ti].at(i) = saved + static_cast<T>(eps);
      const double f_plus = run_forward(build, inputs, rng);
      inputs[ti].at(i) = saved - static_cast<T>(eps);
      const double f_minus = run_forward(build, inputs, rng);
      inputs[ti].at(i) = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double analytic = static_cast<double>(inputs[ti].grad[static_cast<size_t>(i)]);
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        report.pass = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        report.detail = str("non-finite gradient at input ", ti, " index ", i);
        return report;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.detail = str("input ", ti, " index ", i, ": analytic=", analytic,
                            " numeric=", numeric);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

template <typename T>
GradCheckReport grad_check_params(const std::function<Val(Graph<T>&)>& build,
                                  const std::vector<Tensor<T>*>& params, RngKey rng, double eps,
                                  double tol) {
  GradCheckReport report;
  for (Tensor<T>* p : params) {
    SF_CHECK_CONTRACT(p != nullptr && p->requires_grad, "grad_check_params: untrainable param");
    p->ensure_grad();
    p->zero_grad();
  }

  {
    Graph<T> g(rng);
    Val loss = build(g);
    SF_CHECK_CONTRACT(g.value(loss).is_scalar(), "grad_check_params: loss must be scalar");
    g.backward(loss);
    if (auto bad = g.find_nonfinite()) {
      report.pass = false;
      report.max_rel_err = std::numeric_limits<double>::infinity();
      report.detail = "non-finite forward value: " + *bad;
      return report;
    }
  }

  auto forward_only = [&]() {
    Graph<T> g(rng);
    return static_cast<double>(g.value(build(g)).at(0));
  };

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = *params[pi];
    for (int64_t i = 0; i < p.size(); ++i) {
      const T saved = p.at(i);
      p.at(i) = saved + static_cast<T>(eps);
      const double f_plus = forward_only();
      p.at(i) = saved - static_cast<T>(eps);
      const double f_minus = forward_only();
      p.at(i) = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double analytic = static_cast<double>(p.grad[static_cast<size_t>(i)]);
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        report.pass = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        report.detail = str("non-finite gradient at param ", pi, " index ", i);
        return report;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.detail =
            str("param ", pi, " index ", i, ": analytic=", analytic, " numeric=", numeric);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

template GradCheckReport grad_check<float>(const GraphBuilder<float>&, std::vector<Tensor<float>>,
                                           RngKey, double, double);
template GradCheckReport grad_check<double>(const GraphBuilder<double>&,
                                            std::vector<Tensor<double>>, RngKey, double, double);
template GradCheckReport grad_check_params<float>(const std::function<Val(Graph<float>&)>&,
                                                  const std::vector<Tensor<float>*>&, RngKey,
                                                  double, double);
template GradCheckReport grad_check_params<double>(const std::function<Val(Graph<double>&)>&,
                                                   const std::vector<Tensor<double>*>&, RngKey,
                                                   double, double);

}  // namespace slimformer
