#ifndef SLIMFORMER_CHECKPOINT_HPP
#define SLIMFORMER_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "slimformer/tensor.hpp"

namespace slimformer {

// Container file for tensors plus free-form JSON metadata. Layout:
//
//   bytes 0..7    magic "SFTENS01"
//   bytes 8..15   header length H, unsigned 64-bit little-endian
//   bytes 16..    header, UTF-8 JSON of exactly H bytes
//   then          payload: raw little-endian scalars, 8-byte aligned entries
//
// The header is {"format_version": 1, "meta": {...}, "tensors": {name:
// {"dtype": "f32"|"f64"|"i32", "shape": [...], "offset": N, "nbytes": M}}}
// with offsets relative to the payload start. Entries are packed in
// lexicographic name order, which makes writes byte-reproducible.
// The full layout is documented in docs/file_formats.md.

enum class Dtype { kF32, kF64, kI32 };

const char* dtype_name(Dtype d);
Dtype parse_dtype(const std::string& name);
size_t dtype_size(Dtype d);

struct BlobEntry {
  Dtype dtype = Dtype::kF64;
  Shape shape;
  std::vector<uint8_t> bytes;
};

class Container {
 public:
  nlohmann::json meta = nlohmann::json::object();

  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  std::vector<std::string> names() const;
  const BlobEntry& entry(const std::string& name) const;

  template <typename T>
  void put_tensor(const std::string& name, const Tensor<T>& t);
  void put_ints(const std::string& name, Shape shape, const std::vector<int32_t>& v);

  // Loads into the requested scalar type, converting between f32 and f64
  // storage as needed. Integer entries only load via get_ints.
  template <typename T>
  Tensor<T> get_tensor(const std::string& name) const;
  std::vector<int32_t> get_ints(const std::string& name) const;

  void save(const std::string& path) const;
  static Container load(const std::string& path);

 private:
  std::map<std::string, BlobEntry> entries_;
};

}  // namespace slimformer

#endif  // SLIMFORMER_CHECKPOINT_HPP
