#ifndef SLIMFORMER_SHAPE_HPP
#define SLIMFORMER_SHAPE_HPP

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "slimformer/common.hpp"

namespace slimformer {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// b broadcasts onto a if b's shape equals a trailing suffix of a's shape
// (scalars, shape [1] or [], broadcast everywhere). No other broadcasting.
inline bool trailing_broadcastable(const Shape& a, const Shape& b) {
  if (b.empty() || (b.size() == 1 && b[0] == 1)) return true;
  if (b.size() > a.size()) return false;
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  }
  return true;
}

inline int normalize_axis(int axis, size_t rank) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  SF_CHECK_CONTRACT(axis >= 0 && axis < r, "axis ", axis, " out of range for rank ", r);
  return axis;
}

}  // namespace slimformer

#endif  // SLIMFORMER_SHAPE_HPP
