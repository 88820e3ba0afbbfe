#ifndef SLIMFORMER_GRADSUITE_HPP
#define SLIMFORMER_GRADSUITE_HPP

#include <ostream>
#include <string>
#include <vector>

namespace slimformer {

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0;
  bool pass = false;
};

// Central finite-difference checks (64-bit, eps 1e-5, tolerance 1e-4) for
// every differentiable operation in the repo, composed the way the training
// loops use them. Prints one line per check when `out` is given.
std::vector<GradSuiteEntry> run_grad_suite(std::ostream* out);

bool grad_suite_passes(std::ostream* out);

}  // namespace slimformer

#endif  // SLIMFORMER_GRADSUITE_HPP
