#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "samst/backbone.hpp"
#include "samst/image.hpp"
#include "samst/model.hpp"

namespace samst {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

inline constexpr char kArchiveMagic[6] = {'S', 'A', 'M', 'S', 'T', '1'};
inline constexpr std::uint8_t kArchiveLittleEndian = 'L';
inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

struct ArchiveEntry {
  std::string name;
  Tensor<float> value;

  friend bool operator==(const ArchiveEntry& a, const ArchiveEntry& b) { return a.name == b.name && a.value == b.value; }
};

// Named float32 tensors plus string metadata. Entries are kept sorted by
// name, which is also the on-disk manifest order.
struct TensorArchive {
  std::map<std::string, std::string> metadata;
  std::vector<ArchiveEntry> entries;

  void add(std::string name, Tensor<float> value) {
    auto it = std::lower_bound(entries.begin(), entries.end(), name,
                               [](const ArchiveEntry& e, const std::string& n) { return e.name < n; });
    if (it != entries.end() && it->name == name) throw ContractError("archive: duplicate tensor '" + name + "'");
    entries.insert(it, ArchiveEntry{std::move(name), std::move(value)});
  }

  const ArchiveEntry* find(const std::string& name) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), name,
                               [](const ArchiveEntry& e, const std::string& n) { return e.name < n; });
    return it != entries.end() && it->name == name ? &*it : nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;
};

namespace detail {

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  template <typename U>
  void pod(U v) {
    raw(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return b_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("archive truncated while reading ") + what, pos_);
  }
  template <typename U>
  U pod(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline void write_manifest(ByteWriter& w, const TensorArchive& a) {
  w.pod(static_cast<std::uint32_t>(a.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : a.entries) {
    const std::uint64_t nbytes = e.value.size() * sizeof(float);
    w.str(e.name);
    w.pod(kDtypeF32);
    w.pod(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.pod(static_cast<std::uint64_t>(d));
    w.pod(offset);
    w.pod(nbytes);
    offset += nbytes;
  }
}

inline void write_payload(ByteWriter& w, const TensorArchive& a) {
  for (const auto& e : a.entries) w.raw(e.value.data().data(), e.value.size() * sizeof(float));
}

}  // namespace detail

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 15]);
  }
  return out;
}

inline std::string sha256_hex(std::span<const std::uint8_t> data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  return to_hex(std::span<const std::uint8_t>(md, len));
}

// SHA-256 over the serialized manifest and payload. Metadata is excluded, so
// this identifies the weights alone.
inline std::string archive_digest(const TensorArchive& a) {
  detail::ByteWriter w;
  detail::write_manifest(w, a);
  detail::write_payload(w, a);
  return sha256_hex(w.bytes);
}

inline std::vector<std::uint8_t> serialize_archive(const TensorArchive& a) {
  detail::ByteWriter w;
  w.raw(kArchiveMagic, sizeof kArchiveMagic);
  w.pod(kArchiveLittleEndian);
  w.pod(kArchiveVersion);
  w.pod(static_cast<std::uint32_t>(a.metadata.size()));
  for (const auto& [k, v] : a.metadata) {
    w.str(k);
    w.str(v);
  }
  detail::write_manifest(w, a);
  std::uint64_t payload = 0;
  for (const auto& e : a.entries) payload += e.value.size() * sizeof(float);
  w.pod(payload);
  detail::write_payload(w, a);
  return std::move(w.bytes);
}

inline TensorArchive parse_archive(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.take(sizeof kArchiveMagic, "magic");
  if (!std::equal(magic.begin(), magic.end(), kArchiveMagic)) throw FormatError("bad archive magic", 0);
  if (r.pod<std::uint8_t>("endianness tag") != kArchiveLittleEndian) {
    throw FormatError("unsupported endianness tag", r.pos() - 1);
  }
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kArchiveVersion) {
    throw FormatError("unsupported archive version " + std::to_string(version), r.pos() - 4);
  }
  TensorArchive a;
  const auto nmeta = r.pod<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    const std::size_t at = r.pos();
    auto k = r.str("metadata key");
    auto v = r.str("metadata value");
    if (!a.metadata.emplace(std::move(k), std::move(v)).second) throw FormatError("duplicate metadata key", at);
  }

  struct Item {
    std::string name;
    Shape shape;
    std::uint64_t offset, nbytes;
    std::size_t at;
  };
  std::vector<Item> items;
  const auto count = r.pod<std::uint32_t>("manifest count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Item it;
    it.at = r.pos();
    it.name = r.str("tensor name");
    if (r.pod<std::uint8_t>("dtype") != kDtypeF32) throw FormatError("unsupported dtype for '" + it.name + "'", it.at);
    const auto rank = r.pod<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw FormatError("bad rank for '" + it.name + "'", it.at);
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.pod<std::uint64_t>("shape");
      if (dim == 0 || dim > (1ull << 32)) throw FormatError("bad dimension for '" + it.name + "'", r.pos() - 8);
      numel *= dim;
      it.shape.push_back(static_cast<std::size_t>(dim));
    }
    it.offset = r.pod<std::uint64_t>("offset");
    it.nbytes = r.pod<std::uint64_t>("byte count");
    if (it.nbytes != numel * sizeof(float)) {
      throw FormatError("manifest byte count does not match shape of '" + it.name + "'", it.at);
    }
    if (!items.empty() && !(items.back().name < it.name)) {
      throw FormatError("manifest names not unique and sorted at '" + it.name + "'", it.at);
    }
    items.push_back(std::move(it));
  }
  const auto payload_size = r.pod<std::uint64_t>("payload size");
  const std::size_t payload_start = r.pos();
  if (payload_size > r.remaining()) throw FormatError("payload truncated", payload_start + r.remaining());
  if (payload_size < r.remaining()) throw FormatError("trailing bytes after payload", payload_start + payload_size);
  const auto payload = r.take(static_cast<std::size_t>(payload_size), "payload");

  std::vector<const Item*> by_offset;
  for (const auto& it : items) by_offset.push_back(&it);
  std::sort(by_offset.begin(), by_offset.end(), [](auto* x, auto* y) { return x->offset < y->offset; });
  std::uint64_t end = 0;
  for (const auto* it : by_offset) {
    if (it->offset < end) throw FormatError("tensor '" + it->name + "' overlaps its predecessor", it->at);
    if (it->offset + it->nbytes > payload_size) throw FormatError("tensor '" + it->name + "' exceeds payload", it->at);
    end = it->offset + it->nbytes;
  }
  for (const auto& it : items) {
    std::vector<float> v(shape_numel(it.shape));
    std::memcpy(v.data(), payload.data() + it.offset, it.nbytes);
    a.entries.push_back(ArchiveEntry{it.name, Tensor<float>(it.shape, std::move(v))});
  }
  return a;
}

// Returns the digest.
inline std::string save_archive(const TensorArchive& a, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_archive(a));
  return archive_digest(a);
}

inline TensorArchive load_archive(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_archive(bytes);
}

// Model weights go to float32; wider types are recorded in metadata.
template <std::floating_point T>
TensorArchive model_archive(const SamstModel<T>& model) {
  TensorArchive a;
  a.metadata["kind"] = "samst-model";
  a.metadata["config"] = nlohmann::json(model.config()).dump();
  if (!std::is_same_v<T, float>) a.metadata["downcast_from"] = "float64";
  for (const auto& p : model.weights().all()) a.add(p.name, p.value.template cast<float>());
  return a;
}

template <std::floating_point T>
std::string model_fingerprint(const SamstModel<T>& model) {
  return archive_digest(model_archive(model));
}

inline SamstModel<float> model_from_archive(const TensorArchive& a) {
  const auto it = a.metadata.find("config");
  if (it == a.metadata.end()) throw FormatError("archive has no 'config' metadata; not a model archive");
  NetworkConfig cfg;
  try {
    cfg = nlohmann::json::parse(it->second).get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("archive config metadata: ") + e.what());
  }
  cfg.validate();
  ModelWeights<float> w;
  for (const auto& e : a.entries) w.add(e.name, e.value);
  return SamstModel<float>(cfg, std::move(w));
}

template <std::floating_point T>
std::string save_model(const SamstModel<T>& model, const std::filesystem::path& path) {
  return save_archive(model_archive(model), path);
}

inline SamstModel<float> load_model(const std::filesystem::path& path) { return model_from_archive(load_archive(path)); }

inline TensorArchive backbone_archive(const std::map<std::string, Tensor<float>>& tensors) {
  TensorArchive a;
  a.metadata["kind"] = "vgg16";
  a.metadata["preprocess_mean"] = "0.485,0.456,0.406";
  a.metadata["preprocess_std"] = "0.229,0.224,0.225";
  for (const auto& [name, t] : tensors) a.add(name, t);
  return a;
}

inline FeatureBackbone<float> load_backbone(const std::filesystem::path& path) {
  std::map<std::string, Tensor<float>> tensors;
  for (auto& e : load_archive(path).entries) tensors.emplace(e.name, std::move(e.value));
  return FeatureBackbone<float>::vgg16(tensors);
}

}  // namespace samst
