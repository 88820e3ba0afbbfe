#ifndef SLIMFORMER_COMMON_HPP
#define SLIMFORMER_COMMON_HPP

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace slimformer {

enum class ErrorCategory {
  kShape,     // dimension / shape mismatch
  kDomain,    // input outside an operation's domain (log of non-positive, ...)
  kContract,  // precondition violated by the caller
  kNumeric,   // non-finite values, non-convergence
  kConfig,    // bad configuration or override
  kUsage,     // bad command line
  kIo,        // file / container problems
};

inline const char* error_category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kDomain: return "domain";
    case ErrorCategory::kContract: return "contract";
    case ErrorCategory::kNumeric: return "numeric";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kUsage: return "usage";
    case ErrorCategory::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

namespace detail {
inline void str_append(std::ostringstream&) {}
template <typename A, typename... Rest>
void str_append(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  str_append(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string str(const Args&... args) {
  std::ostringstream os;
  detail::str_append(os, args...);
  return os.str();
}

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

}  // namespace slimformer

// Cheap precondition checks; the message expression is only evaluated on failure.
#define SF_CHECK(cond, category, ...)                                    \
  do {                                                                   \
    if (!(cond)) ::slimformer::fail((category), ::slimformer::str(__VA_ARGS__)); \
  } while (0)

#define SF_CHECK_SHAPE(cond, ...) SF_CHECK(cond, ::slimformer::ErrorCategory::kShape, __VA_ARGS__)
#define SF_CHECK_CONTRACT(cond, ...) \
  SF_CHECK(cond, ::slimformer::ErrorCategory::kContract, __VA_ARGS__)

#endif  // SLIMFORMER_COMMON_HPP
