#pragma once

#include <charconv>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "samst/image.hpp"
#include "samst/style.hpp"

namespace samst {

// Tab-separated text:
//   samst-codebook<TAB>1
//   fingerprint<TAB><hex>
//   dim<TAB><C>
//   identity<TAB>identity<TAB><name><TAB><C floats, space separated>
//   style<TAB><id><TAB><name><TAB><C floats>
// Floats use the shortest text that round-trips exactly.
inline constexpr int kCodebookVersion = 1;

namespace detail {

inline void check_field(const std::string& s, const char* what) {
  if (s.find_first_of("\t\n\r") != std::string::npos) {
    throw CodebookError(std::string("codebook ") + what + " '" + s + "' contains a tab or newline");
  }
}

inline std::string format_floats(const std::vector<float>& v) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v[i]);
    if (i) out.push_back(' ');
    out.append(buf, end);
  }
  return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

}  // namespace detail

inline std::string serialize_codebook(const StyleCodebook& cb) {
  std::string out = "samst-codebook\t" + std::to_string(kCodebookVersion) + "\n";
  detail::check_field(cb.fingerprint(), "fingerprint");
  out += "fingerprint\t" + cb.fingerprint() + "\n";
  out += "dim\t" + std::to_string(cb.dim()) + "\n";
  auto line = [&](const char* kind, const StyleRepresentation& r) {
    detail::check_field(r.id, "id");
    detail::check_field(r.name, "name");
    out += std::string(kind) + "\t" + r.id + "\t" + r.name + "\t" + detail::format_floats(r.values) + "\n";
  };
  line("identity", cb.identity());
  for (const auto& e : cb.entries()) line("style", e);
  return out;
}

inline StyleCodebook parse_codebook(std::string_view text) {
  std::size_t offset = 0;
  std::size_t lineno = 0;
  std::optional<std::size_t> dim;
  std::optional<std::string> fingerprint;
  std::optional<StyleRepresentation> identity;
  std::vector<StyleRepresentation> styles;
  bool header = false;
  while (offset < text.size()) {
    const auto nl = text.find('\n', offset);
    const std::size_t line_start = offset;
    std::string_view line = text.substr(offset, nl == std::string_view::npos ? std::string_view::npos : nl - offset);
    offset = nl == std::string_view::npos ? text.size() : nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) -> FormatError {
      return FormatError("codebook line " + std::to_string(lineno) + ": " + msg, line_start);
    };
    const auto f = detail::split(line, '\t');
    if (!header) {
      if (f.size() != 2 || f[0] != "samst-codebook") throw fail("missing 'samst-codebook' header");
      if (f[1] != std::to_string(kCodebookVersion)) throw fail("unsupported codebook version " + std::string(f[1]));
      header = true;
      continue;
    }
    if (f[0] == "fingerprint") {
      if (f.size() != 2 || fingerprint) throw fail("bad fingerprint line");
      fingerprint = std::string(f[1]);
    } else if (f[0] == "dim") {
      std::size_t d = 0;
      if (f.size() != 2 || dim) throw fail("bad dim line");
      auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), d);
      if (ec != std::errc{} || p != f[1].data() + f[1].size() || d == 0) throw fail("bad dimension");
      dim = d;
    } else if (f[0] == "identity" || f[0] == "style") {
      if (!dim) throw fail("entry before dim line");
      if (f.size() != 4) throw fail("expected 4 tab-separated fields");
      StyleRepresentation r{std::string(f[1]), std::string(f[2]), {}};
      for (auto tok : detail::split(f[3], ' ')) {
        float v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || p != tok.data() + tok.size()) throw fail("bad number '" + std::string(tok) + "'");
        r.values.push_back(v);
      }
      if (r.values.size() != *dim) {
        throw fail("entry '" + r.id + "' has " + std::to_string(r.values.size()) + " values, expected " +
                   std::to_string(*dim));
      }
      if (f[0] == "identity") {
        if (identity) throw fail("more than one identity entry");
        if (r.id != kIdentityStyleId) throw fail("identity entry must use id 'identity'");
        identity = std::move(r);
      } else {
        styles.push_back(std::move(r));
      }
    } else {
      throw fail("unknown record '" + std::string(f[0]) + "'");
    }
  }
  if (!header) throw FormatError("empty codebook", 0);
  if (!dim) throw FormatError("codebook has no dim line", text.size());
  if (!identity) throw FormatError("codebook has no identity entry", text.size());
  StyleCodebook cb(*dim);
  cb.set_identity(std::move(*identity));
  for (auto& s : styles) cb.add(std::move(s));
  cb.set_fingerprint(fingerprint.value_or(""));
  return cb;
}

inline void save_codebook(const StyleCodebook& cb, const std::filesystem::path& path) {
  const auto text = serialize_codebook(cb);
  write_file_atomic(path, text.data(), text.size());
}

// With `expected_fingerprint` set, a codebook trained against different
// weights is rejected unless `allow_mismatch` is true.
inline StyleCodebook load_codebook(const std::filesystem::path& path,
                                   const std::optional<std::string>& expected_fingerprint = {},
                                   bool allow_mismatch = false) {
  const auto bytes = read_file_bytes(path);
  auto cb = parse_codebook(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (expected_fingerprint && cb.fingerprint() != *expected_fingerprint && !allow_mismatch) {
    throw CodebookError("codebook '" + path.string() + "' was trained for network " + cb.fingerprint() +
                        ", but the model fingerprint is " + *expected_fingerprint);
  }
  return cb;
}

// Disjoint union; the identity entry comes from `a`.
inline StyleCodebook merge_codebooks(const StyleCodebook& a, const StyleCodebook& b) {
  if (a.fingerprint() != b.fingerprint()) {
    throw CodebookError("incompatible codebooks: fingerprints " + a.fingerprint() + " and " + b.fingerprint() +
                        " differ");
  }
  if (a.dim() != b.dim()) throw CodebookError("incompatible codebooks: style dimensions differ");
  std::vector<std::string> dups;
  for (const auto& e : b.entries())
    if (a.find(e.id)) dups.push_back(e.id);
  if (!dups.empty()) {
    std::string list;
    for (const auto& d : dups) list += (list.empty() ? "" : ", ") + d;
    throw CodebookError("codebook merge conflict: duplicate ids " + list);
  }
  StyleCodebook out = a;
  for (const auto& e : b.entries()) out.add(e);
  return out;
}

}  // namespace samst
