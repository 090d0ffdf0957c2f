#include "rfr/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

namespace rfr {
namespace {

static_assert(std::endian::native == std::endian::little, "weights I/O assumes a little-endian host");

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const std::string& field) {
    U v;
    get_bytes(&v, sizeof(U), field);
    return v;
  }
  void get_bytes(void* dst, std::size_t n, const std::string& field) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("weights: truncated while reading " + field + " at byte " +
                        std::to_string(pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
std::map<std::string, Tensor<T>*> all_tensors(ParamStore<T>& store) {
  std::map<std::string, Tensor<T>*> out;
  for (auto& [name, e] : store.params()) out.emplace(name, &e.value);
  for (auto& [name, b] : store.buffers()) out.emplace(name, &b);
  return out;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> serialize_weights(const ParamStore<T>& store) {
  std::map<std::string, const Tensor<T>*> tensors;
  for (const auto& [name, e] : store.params()) tensors.emplace(name, &e.value);
  for (const auto& [name, b] : store.buffers()) tensors.emplace(name, &b);

  Writer w;
  w.put_bytes(kWeightsMagic, 4);
  w.put<std::uint32_t>(kWeightsVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(0);
    w.put<std::uint8_t>(4);
    const Shape s = t->shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (T v : t->values()) w.put<float>(static_cast<float>(v));
  }
  return w.take();
}

template <typename T>
void deserialize_weights(ParamStore<T>& store, const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kWeightsMagic, 4) != 0) throw FormatError("weights: bad magic (expected RFRW)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kWeightsVersion) {
    throw FormatError("weights: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");

  auto targets = all_tensors(store);
  std::map<std::string, Tensor<T>> staged;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    const auto len = r.get<std::uint16_t>(where + " name length");
    std::string name(len, '\0');
    r.get_bytes(name.data(), len, where + " name");
    auto it = targets.find(name);
    if (it == targets.end()) throw FormatError("weights: unknown tensor name '" + name + "'");
    if (staged.count(name)) throw FormatError("weights: duplicate tensor '" + name + "'");
    const auto dtype = r.get<std::uint8_t>(name + " dtype");
    if (dtype != 0) throw FormatError("weights: tensor '" + name + "' has unsupported dtype " + std::to_string(dtype));
    const auto rank = r.get<std::uint8_t>(name + " rank");
    if (rank != 4) throw FormatError("weights: tensor '" + name + "' has rank " + std::to_string(rank) + ", expected 4");
    std::uint32_t dims[4];
    for (auto& d : dims) d = r.get<std::uint32_t>(name + " dims");
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    if (!(shape == it->second->shape())) {
      throw FormatError("weights: tensor '" + name + "' has shape " + shape.str() + ", expected " +
                        it->second->shape().str());
    }
    std::vector<float> raw(shape.numel());
    r.get_bytes(raw.data(), raw.size() * sizeof(float), name + " data");
    Tensor<T> t(shape);
    auto dst = t.data();
    for (std::size_t k = 0; k < raw.size(); ++k) dst[k] = static_cast<T>(raw[k]);
    staged.emplace(name, std::move(t));
  }
  if (!r.done()) throw FormatError("weights: trailing bytes after the last tensor");
  for (const auto& [name, ptr] : targets) {
    if (!staged.count(name)) throw FormatError("weights: missing tensor '" + name + "'");
  }
  for (auto& [name, t] : staged) *targets.at(name) = std::move(t);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error while reading '" + path + "'");
  return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error while writing '" + path + "'");
}

template <typename T>
void save_weights(const ParamStore<T>& store, const std::string& path) {
  write_file(path, serialize_weights(store));
}

template <typename T>
void load_weights(ParamStore<T>& store, const std::string& path) {
  try {
    deserialize_weights(store, read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

template std::vector<std::uint8_t> serialize_weights(const ParamStore<float>&);
template std::vector<std::uint8_t> serialize_weights(const ParamStore<double>&);
template void deserialize_weights(ParamStore<float>&, const std::vector<std::uint8_t>&);
template void deserialize_weights(ParamStore<double>&, const std::vector<std::uint8_t>&);
template void save_weights(const ParamStore<float>&, const std::string&);
template void save_weights(const ParamStore<double>&, const std::string&);
template void load_weights(ParamStore<float>&, const std::string&);
template void load_weights(ParamStore<double>&, const std::string&);

}  // namespace rfr
