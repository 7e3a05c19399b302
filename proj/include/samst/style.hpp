#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "samst/error.hpp"

namespace samst {

inline constexpr std::size_t kDefaultStyleDim = 16;
inline constexpr const char* kIdentityStyleId = "identity";

// One learned style: C numbers plus bookkeeping.
struct StyleRepresentation {
  std::string id;
  std::string name;
  std::vector<float> values;

  static StyleRepresentation ones(std::string id, std::string name, std::size_t dim = kDefaultStyleDim) {
    return {std::move(id), std::move(name), std::vector<float>(dim, 1.0f)};
  }

  std::size_t dim() const noexcept { return values.size(); }

  void validate() const {
    if (values.empty()) throw ContractError("style representation '" + id + "' is empty");
    for (float v : values) {
      if (!std::isfinite(v)) throw NumericError("style representation '" + id + "' has a non-finite value");
    }
  }

  friend bool operator==(const StyleRepresentation&, const StyleRepresentation&) = default;
};

// Ordered set of styles bound to one network (by weight fingerprint). The
// identity entry reproduces the content image and is always present.
class StyleCodebook {
 public:
  StyleCodebook() : identity_(StyleRepresentation::ones(kIdentityStyleId, "identity")) {}
  explicit StyleCodebook(std::size_t dim)
      : identity_(StyleRepresentation::ones(kIdentityStyleId, "identity", dim)) {}

  std::size_t dim() const noexcept { return identity_.dim(); }

  const StyleRepresentation& identity() const noexcept { return identity_; }
  StyleRepresentation& identity() noexcept { return identity_; }
  void set_identity(StyleRepresentation rep) {
    rep.id = kIdentityStyleId;
    check_dim(rep);
    identity_ = std::move(rep);
  }

  const std::vector<StyleRepresentation>& entries() const noexcept { return entries_; }
  std::vector<StyleRepresentation>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  bool contains(const std::string& id) const { return id == kIdentityStyleId || find(id) != nullptr; }

  const StyleRepresentation* find(const std::string& id) const {
    if (id == kIdentityStyleId) return &identity_;
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.id == id; });
    return it == entries_.end() ? nullptr : &*it;
  }

  const StyleRepresentation& at(const std::string& id) const {
    const auto* rep = find(id);
    if (!rep) throw CodebookError("unknown style id '" + id + "'");
    return *rep;
  }

  const StyleRepresentation* find_by_name(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &*it;
  }

  void add(StyleRepresentation rep) {
    if (rep.id.empty()) throw CodebookError("style id must not be empty");
    if (contains(rep.id)) throw CodebookError("duplicate style id '" + rep.id + "'");
    check_dim(rep);
    rep.validate();
    entries_.push_back(std::move(rep));
  }

  const std::string& fingerprint() const noexcept { return fingerprint_; }
  void set_fingerprint(std::string fp) { fingerprint_ = std::move(fp); }

  friend bool operator==(const StyleCodebook&, const StyleCodebook&) = default;

 private:
  void check_dim(const StyleRepresentation& rep) const {
    if (rep.dim() != identity_.dim()) {
      throw ShapeError("style '" + rep.id + "' has length " + std::to_string(rep.dim()) + ", codebook expects " +
                       std::to_string(identity_.dim()));
    }
  }

  StyleRepresentation identity_;
  std::vector<StyleRepresentation> entries_;
  std::string fingerprint_;
};

struct MixResult {
  StyleRepresentation rep;
  bool normalized = false;  // weights did not sum to 1 and were rescaled
};

// f = sum_i w_i f_i. Weights are renormalised (and flagged) when their sum
// is off by more than 1e-6.
inline MixResult mix_representation(const std::vector<std::pair<const StyleRepresentation*, double>>& entries) {
  if (entries.empty()) throw ContractError("mix_representation: no styles given");
  double total = 0;
  for (const auto& [rep, w] : entries) {
    if (!std::isfinite(w)) throw NumericError("mix_representation: non-finite weight");
    if (rep == nullptr) throw ContractError("mix_representation: null style");
    total += w;
  }
  const std::size_t dim = entries.front().first->dim();
  MixResult out;
  out.normalized = std::abs(total - 1.0) > 1e-6;
  if (out.normalized && total == 0.0) throw ContractError("mix_representation: weights sum to zero");
  const double norm = out.normalized ? total : 1.0;
  std::vector<double> acc(dim, 0.0);
  std::string id;
  for (const auto& [rep, w] : entries) {
    if (rep->dim() != dim) throw ShapeError("mix_representation: style lengths differ");
    for (std::size_t k = 0; k < dim; ++k) acc[k] += (w / norm) * static_cast<double>(rep->values[k]);
    id += (id.empty() ? "" : "+") + rep->id;
  }
  out.rep.id = "mix:" + id;
  out.rep.name = out.rep.id;
  out.rep.values.resize(dim);
  for (std::size_t k = 0; k < dim; ++k) out.rep.values[k] = static_cast<float>(acc[k]);
  return out;
}

// (1 - alpha) f_0 + alpha f_i, alpha in [0, 1].
inline StyleRepresentation tradeoff_representation(const StyleRepresentation& f0, const StyleRepresentation& fi,
                                                   double alpha) {
  if (!std::isfinite(alpha)) throw NumericError("tradeoff_representation: non-finite alpha");
  if (alpha < 0.0 || alpha > 1.0) {
    throw ContractError("tradeoff_representation: alpha must be in [0, 1], got " + std::to_string(alpha));
  }
  if (f0.dim() != fi.dim()) throw ShapeError("tradeoff_representation: style lengths differ");
  StyleRepresentation out{fi.id, fi.name, std::vector<float>(fi.dim())};
  for (std::size_t k = 0; k < fi.dim(); ++k) {
    out.values[k] = static_cast<float>((1.0 - alpha) * static_cast<double>(f0.values[k]) +
                                       alpha * static_cast<double>(fi.values[k]));
  }
  return out;
}

}  // namespace samst
