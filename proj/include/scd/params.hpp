#pragma once

// Named parameter storage and the binary checkpoint format.
//
// Checkpoint layout (all integers little-endian):
//   magic   "SCDCKPT\0"            8 bytes
//   version u32                     currently 1
//   count   u32
//   count x { name_len u32, name bytes, rank u32, dims u64[rank], offset u64 }
//   payload f32[...]                offsets are in elements from payload start

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "scd/rng.hpp"
#include "scd/tensor.hpp"

namespace scd {

enum class Init { Zeros, Ones, Normal, Kaiming };

struct InitSpec {
  Init kind = Init::Zeros;
  double stddev = 0.02;  // Normal only
  std::size_t fan_in = 1;  // Kaiming only
};

template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Registers a trainable tensor. Initial values depend only on (seed, name),
  /// so adding or removing other parameters never shifts them.
  Tensor<T> add(const std::string& name, Shape shape, InitSpec init) {
    if (index_.count(name)) throw ContractError("parameter '" + name + "' registered twice");
    const std::size_t n = numel(shape);
    std::vector<T> values(n, T{0});
    Rng rng(derive_seed(seed_, name));
    switch (init.kind) {
      case Init::Zeros:
        break;
      case Init::Ones:
        std::fill(values.begin(), values.end(), T{1});
        break;
      case Init::Normal:
        for (auto& v : values) v = static_cast<T>(init.stddev * rng.normal());
        break;
      case Init::Kaiming: {
        const double sd = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(1, init.fan_in)));
        for (auto& v : values) v = static_cast<T>(sd * rng.normal());
        break;
      }
    }
    Tensor<T> t(std::move(shape), std::move(values), true);
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return tensors_[it->second];
  }
  Tensor<T>& at(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  std::size_t count() const {
    std::size_t total = 0;
    for (const auto& t : tensors_) total += t.size();
    return total;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& t : tensors_) t.set_requires_grad(on);
  }

  /// Copies values (with precision conversion) from a store with the same layout.
  template <typename U>
  void copy_from(const ParamStore<U>& other) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      const auto& src = other.at(names_[i]);
      if (src.shape() != tensors_[i].shape())
        throw ContractError("parameter '" + names_[i] + "' shape mismatch on copy");
      auto dst = tensors_[i].mutable_data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src.data()[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::ostream& out, U value) {
  static_assert(std::is_integral_v<U> || std::is_same_v<U, float>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!in) throw FileError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, detail::kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.names().size()));
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < store.names().size(); ++i) {
    const auto& name = store.names()[i];
    const auto& t = store.tensors()[i];
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    detail::put_le<std::uint64_t>(out, offset);
    offset += t.size();
  }
  for (const auto& t : store.tensors())
    for (T v : t.data()) detail::put_le<float>(out, static_cast<float>(v));
  if (!out) throw FileError("write failure on '" + path + "'");
}

/// Loads values into an already-constructed store; names and shapes must match.
template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint '" + path + "'");
  char magic[sizeof(detail::kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw FileError("'" + path + "' is not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != detail::kCheckpointVersion)
    throw FileError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(in);
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(count);
  for (auto& e : entries) {
    const auto len = detail::get_le<std::uint32_t>(in);
    e.name.resize(len);
    in.read(e.name.data(), len);
    const auto rank = detail::get_le<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(detail::get_le<std::uint64_t>(in));
    e.offset = detail::get_le<std::uint64_t>(in);
  }
  if (count != store.names().size())
    throw FileError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(store.names().size()));
  std::uint64_t total = 0;
  for (const auto& e : entries) total = std::max<std::uint64_t>(total, e.offset + numel(e.shape));
  std::vector<float> payload(total);
  for (auto& v : payload) v = detail::get_le<float>(in);
  for (const auto& e : entries) {
    if (!store.contains(e.name)) throw FileError("checkpoint tensor '" + e.name + "' unknown to model");
    auto& t = store.at(e.name);
    if (t.shape() != e.shape)
      throw FileError("checkpoint tensor '" + e.name + "' has shape " + to_string(e.shape) +
                      ", model expects " + to_string(t.shape()));
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(payload[e.offset + i]);
  }
}

}  // namespace scd
