#include "slimformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "slimformer/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "container I/O writes raw little-endian scalars");

namespace slimformer {

namespace {
constexpr char kMagic[8] = {'S', 'F', 'T', 'E', 'N', 'S', '0', '1'};
constexpr int kFormatVersion = 1;

int64_t aligned8(int64_t n) { return (n + 7) & ~int64_t(7); }
}  // namespace

const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::kF32: return "f32";
    case Dtype::kF64: return "f64";
    case Dtype::kI32: return "i32";
  }
  return "?";
}

Dtype parse_dtype(const std::string& name) {
  if (name == "f32") return Dtype::kF32;
  if (name == "f64") return Dtype::kF64;
  if (name == "i32") return Dtype::kI32;
  fail(ErrorCategory::kIo, str("unknown dtype '", name, "' in container header"));
}

size_t dtype_size(Dtype d) { return d == Dtype::kF64 ? 8 : 4; }

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const BlobEntry& Container::entry(const std::string& name) const {
  auto it = entries_.find(name);
  SF_CHECK(it != entries_.end(), ErrorCategory::kIo, "container has no entry '", name, "'");
  return it->second;
}

template <typename T>
void Container::put_tensor(const std::string& name, const Tensor<T>& t) {
  BlobEntry e;
  e.dtype = std::is_same_v<T, float> ? Dtype::kF32 : Dtype::kF64;
  e.shape = t.shape;
  e.bytes.resize(t.data.size() * sizeof(T));
  std::memcpy(e.bytes.data(), t.data.data(), e.bytes.size());
  entries_[name] = std::move(e);
}

void Container::put_ints(const std::string& name, Shape shape, const std::vector<int32_t>& v) {
  SF_CHECK_SHAPE(numel(shape) == static_cast<int64_t>(v.size()), "put_ints: shape ",
                 shape_str(shape), " does not match ", v.size(), " values");
  BlobEntry e;
  e.dtype = Dtype::kI32;
  e.shape = std::move(shape);
  e.bytes.resize(v.size() * sizeof(int32_t));
  std::memcpy(e.bytes.data(), v.data(), e.bytes.size());
  entries_[name] = std::move(e);
}

template <typename T>
Tensor<T> Container::get_tensor(const std::string& name) const {
  const BlobEntry& e = entry(name);
  SF_CHECK(e.dtype != Dtype::kI32, ErrorCategory::kIo, "entry '", name,
           "' holds integers; use get_ints");
  Tensor<T> t(e.shape);
  const size_t n = t.data.size();
  if (e.dtype == Dtype::kF64) {
    const double* src = reinterpret_cast<const double*>(e.bytes.data());
    for (size_t i = 0; i < n; ++i) t.data[i] = static_cast<T>(src[i]);
  } else {
    const float* src = reinterpret_cast<const float*>(e.bytes.data());
    for (size_t i = 0; i < n; ++i) t.data[i] = static_cast<T>(src[i]);
  }
  return t;
}

std::vector<int32_t> Container::get_ints(const std::string& name) const {
  const BlobEntry& e = entry(name);
  SF_CHECK(e.dtype == Dtype::kI32, ErrorCategory::kIo, "entry '", name, "' is not integer");
  std::vector<int32_t> out(e.bytes.size() / sizeof(int32_t));
  std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

void Container::save(const std::string& path) const {
  nlohmann::json tensors = nlohmann::json::object();
  int64_t offset = 0;
  for (const auto& [name, e] : entries_) {
    tensors[name] = {{"dtype", dtype_name(e.dtype)},
                     {"shape", e.shape},
                     {"offset", offset},
                     {"nbytes", e.bytes.size()}};
    offset = aligned8(offset + static_cast<int64_t>(e.bytes.size()));
  }
  nlohmann::json header = {
      {"format_version", kFormatVersion}, {"meta", meta}, {"tensors", tensors}};
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  SF_CHECK(f.good(), ErrorCategory::kIo, "cannot open '", path, "' for writing");
  f.write(kMagic, 8);
  const uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  int64_t written = 0;
  for (const auto& [name, e] : entries_) {
    f.write(reinterpret_cast<const char*>(e.bytes.data()),
            static_cast<std::streamsize>(e.bytes.size()));
    written += static_cast<int64_t>(e.bytes.size());
    while (written % 8 != 0) {
      f.put('\0');
      ++written;
    }
  }
  SF_CHECK(f.good(), ErrorCategory::kIo, "write to '", path, "' failed");
}

Container Container::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SF_CHECK(f.good(), ErrorCategory::kIo, "cannot open '", path, "'");
  char magic[8];
  f.read(magic, 8);
  SF_CHECK(f.good() && std::memcmp(magic, kMagic, 8) == 0, ErrorCategory::kIo, "'", path,
           "' is not a tensor container (bad magic)");
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  SF_CHECK(f.good(), ErrorCategory::kIo, "truncated header in '", path, "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kIo, str("bad container header in '", path, "': ", e.what()));
  }
  SF_CHECK(header.value("format_version", -1) == kFormatVersion, ErrorCategory::kIo,
           "unsupported container format version in '", path, "'");

  const std::streampos payload_start = f.tellg();
  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& [name, je] : header.at("tensors").items()) {
    BlobEntry e;
    e.dtype = parse_dtype(je.at("dtype").get<std::string>());
    e.shape = je.at("shape").get<Shape>();
    const int64_t offset = je.at("offset").get<int64_t>();
    const size_t nbytes = je.at("nbytes").get<size_t>();
    SF_CHECK(nbytes == static_cast<size_t>(numel(e.shape)) * dtype_size(e.dtype),
             ErrorCategory::kIo, "entry '", name, "' has inconsistent byte count");
    e.bytes.resize(nbytes);
    f.seekg(payload_start + std::streampos(offset));
    f.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(nbytes));
    SF_CHECK(f.good(), ErrorCategory::kIo, "truncated payload for entry '", name, "'");
    c.entries_[name] = std::move(e);
  }
  return c;
}

template void Container::put_tensor<float>(const std::string&, const Tensor<float>&);
template void Container::put_tensor<double>(const std::string&, const Tensor<double>&);
template Tensor<float> Container::get_tensor<float>(const std::string&) const;
template Tensor<double> Container::get_tensor<double>(const std::string&) const;

}  // namespace slimformer
