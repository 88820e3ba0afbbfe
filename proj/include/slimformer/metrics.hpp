#ifndef SLIMFORMER_METRICS_HPP
#define SLIMFORMER_METRICS_HPP

#include <fstream>
#include <string>

#include "json.hpp"
#include "slimformer/common.hpp"

namespace slimformer {

// Line-delimited JSON metrics. Key order is fixed by the caller (ordered
// json), values are deterministic functions of the run, and wall-clock data
// stays out of this file entirely so two identical runs produce identical
// bytes.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path, std::ios::trunc) {
    SF_CHECK(out_.good(), ErrorCategory::kIo, "cannot open metrics file '", path, "'");
  }

  void log(const nlohmann::ordered_json& line) {
    out_ << line.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace slimformer

#endif  // SLIMFORMER_METRICS_HPP
