#pragma once

// Serialized frozen-backbone features (.adft), prompt text banks (.adtx) and
// the dataset manifest.
//
// .adft, little-endian:
//   "ADF3" u32 version=1 u32 image_h u32 image_w u32 grid_h u32 grid_w
//   u32 n_layers u32 d_v u8 mask_present
//   n_layers x u32 layer index
//   per layer: grid_h*grid_w*d_v f32 patch tokens (patch-major, row-major grid)
//   d_v f32 CLS token (final layer)
//   if mask_present: image_h*image_w u8 mask, values {0,255}
//
// .adtx, little-endian:
//   "ADTX" u32 version=1 u32 d_t u32 templates_per_state
//   templates_per_state*d_t f32 normal templates, same for abnormal
//   2*d_t f32 pooled (row 0 normal, row 1 abnormal)
//
// Floats are stored as f32 and promoted to f64 on load; a value that is
// exactly representable as f32 survives a round trip bit-exactly.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "anomhead/binary_io.hpp"
#include "anomhead/errors.hpp"
#include "anomhead/numerics.hpp"

namespace anomhead {

inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureBundle {
  std::uint32_t image_h = 0;
  std::uint32_t image_w = 0;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::vector<std::uint32_t> layer_indices;
  std::vector<Tensor2> patch_tokens;  // one [grid_h*grid_w x d_v] block per layer
  std::vector<double> cls_token;
  std::vector<std::uint8_t> mask;  // image_h*image_w, values {0,1}
  bool mask_present = false;

  std::size_t num_patches() const noexcept { return std::size_t{grid_h} * grid_w; }
  std::size_t d_v() const noexcept { return cls_token.size(); }

  // Patch tokens of backbone layer `layer`.
  const Tensor2& tokens_for_layer(std::uint32_t layer) const {
    for (std::size_t i = 0; i < layer_indices.size(); ++i) {
      if (layer_indices[i] == layer) return patch_tokens[i];
    }
    throw CompatError("bundle has no patch tokens for layer " + std::to_string(layer));
  }

  ScoreGrid mask_grid() const {
    ScoreGrid g(image_h, image_w);
    for (std::size_t i = 0; i < mask.size(); ++i) g.values[i] = mask[i];
    return g;
  }

  bool operator==(const FeatureBundle&) const = default;
};

struct Violation {
  std::string field;
  std::string rule;
};

inline std::string to_string(const Violation& v) { return v.field + ": " + v.rule; }

inline std::vector<Violation> validate_bundle(const FeatureBundle& b) {
  std::vector<Violation> out;
  auto add = [&](std::string field, std::string rule) { out.push_back({std::move(field), std::move(rule)}); };

  if (b.image_h == 0 || b.image_w == 0) add("image_h/image_w", "image dimensions must be >= 1");
  if (b.grid_h == 0 || b.grid_w == 0) add("grid_h/grid_w", "grid dimensions must be >= 1");
  if (b.layer_indices.empty()) add("layer_indices", "at least one layer is required");
  for (std::size_t i = 1; i < b.layer_indices.size(); ++i) {
    if (b.layer_indices[i] <= b.layer_indices[i - 1]) {
      add("layer_indices", "must be strictly increasing");
      break;
    }
  }
  if (b.layer_indices.size() != b.patch_tokens.size()) {
    add("patch_tokens", "block count " + std::to_string(b.patch_tokens.size()) + " != layer count " +
                            std::to_string(b.layer_indices.size()));
  }
  const std::size_t d_v = b.cls_token.size();
  if (d_v == 0) add("cls_token", "embedding dimension must be >= 1");
  for (std::size_t l = 0; l < b.patch_tokens.size(); ++l) {
    const Tensor2& t = b.patch_tokens[l];
    const std::string name = "patch_tokens[" + std::to_string(l) + "]";
    if (t.rows() != b.num_patches()) {
      add(name, "has " + std::to_string(t.rows()) + " rows, expected grid_h*grid_w=" +
                    std::to_string(b.num_patches()));
    }
    if (t.cols() != d_v) add(name, "dimension " + std::to_string(t.cols()) + " != d_v " + std::to_string(d_v));
    if (!std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); })) {
      add(name, "contains non-finite values");
    }
  }
  if (!std::all_of(b.cls_token.begin(), b.cls_token.end(), [](double v) { return std::isfinite(v); })) {
    add("cls_token", "contains non-finite values");
  }
  if (b.mask_present) {
    if (b.mask.size() != std::size_t{b.image_h} * b.image_w) {
      add("mask", "size " + std::to_string(b.mask.size()) + " != image_h*image_w");
    }
    if (std::any_of(b.mask.begin(), b.mask.end(), [](std::uint8_t v) { return v > 1; })) {
      add("mask", "entries must be in {0,1}");
    }
  } else if (!b.mask.empty()) {
    add("mask", "present although mask_present is false");
  }
  return out;
}

namespace detail {

inline std::string join_violations(const std::vector<Violation>& v) {
  std::string s;
  for (const auto& x : v) {
    if (!s.empty()) s += "; ";
    s += to_string(x);
  }
  return s;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_bundle(const FeatureBundle& b) {
  if (auto v = validate_bundle(b); !v.empty()) {
    throw ValidationError("refusing to write invalid bundle: " + detail::join_violations(v));
  }
  ByteWriter w;
  w.tag("ADF3");
  w.u32(kFeatureVersion);
  w.u32(b.image_h);
  w.u32(b.image_w);
  w.u32(b.grid_h);
  w.u32(b.grid_w);
  w.u32(static_cast<std::uint32_t>(b.layer_indices.size()));
  w.u32(static_cast<std::uint32_t>(b.d_v()));
  w.u8(b.mask_present ? 1 : 0);
  for (auto l : b.layer_indices) w.u32(l);
  for (const auto& t : b.patch_tokens) {
    for (double v : t.values()) w.f32(static_cast<float>(v));
  }
  for (double v : b.cls_token) w.f32(static_cast<float>(v));
  if (b.mask_present) {
    for (auto m : b.mask) w.u8(m ? 255 : 0);
  }
  return w.buffer();
}

// Parses the byte layout only. The caller decides whether to validate.
inline FeatureBundle decode_bundle_unchecked(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader r(bytes, source);
  r.expect_tag("ADF3");
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kFeatureVersion) r.fail_at(version_at, "unsupported version");
  FeatureBundle b;
  b.image_h = r.u32("image_h");
  b.image_w = r.u32("image_w");
  b.grid_h = r.u32("grid_h");
  b.grid_w = r.u32("grid_w");
  const std::uint32_t n_layers = r.u32("n_layers");
  const std::uint32_t d_v = r.u32("d_v");
  const std::size_t flag_at = r.offset();
  const std::uint8_t flag = r.u8("mask_present");
  if (flag > 1) r.fail_at(flag_at, "mask_present must be 0 or 1");
  b.mask_present = flag == 1;

  const std::uint64_t n = std::uint64_t{b.grid_h} * b.grid_w;
  const std::uint64_t payload = std::uint64_t{n_layers} * 4 + std::uint64_t{n_layers} * n * d_v * 4 +
                                std::uint64_t{d_v} * 4 +
                                (b.mask_present ? std::uint64_t{b.image_h} * b.image_w : 0);
  if (payload > r.remaining()) r.fail("truncated: header announces " + std::to_string(payload) + " payload bytes");

  b.layer_indices.resize(n_layers);
  for (auto& l : b.layer_indices) l = r.u32("layer index");
  b.patch_tokens.reserve(n_layers);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    Tensor2 t(n, d_v);
    for (double& v : t.values()) v = r.f32("patch token");
    b.patch_tokens.push_back(std::move(t));
  }
  b.cls_token.resize(d_v);
  for (double& v : b.cls_token) v = r.f32("cls token");
  if (b.mask_present) {
    b.mask.resize(std::size_t{b.image_h} * b.image_w);
    for (auto& m : b.mask) {
      const std::size_t at = r.offset();
      const std::uint8_t raw = r.u8("mask");
      if (raw != 0 && raw != 255) r.fail_at(at, "mask byte must be 0 or 255");
      m = raw == 255 ? 1 : 0;
    }
  }
  r.expect_end();
  return b;
}

inline FeatureBundle decode_bundle(std::span<const std::uint8_t> bytes, const std::string& source) {
  FeatureBundle b = decode_bundle_unchecked(bytes, source);
  if (auto v = validate_bundle(b); !v.empty()) {
    throw ValidationError(source + ": " + detail::join_violations(v));
  }
  return b;
}

inline void write_bundle(const FeatureBundle& b, const std::filesystem::path& path) {
  write_file_bytes(path, encode_bundle(b));
}

inline FeatureBundle read_bundle(const std::filesystem::path& path) {
  return decode_bundle(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Text bank

struct TextBank {
  std::size_t d_t = 0;
  std::size_t templates_per_state = 0;
  Tensor2 normal_templates;    // templates x d_t
  Tensor2 abnormal_templates;  // templates x d_t
  Tensor2 pooled;              // 2 x d_t, row 0 normal, row 1 abnormal

  bool operator==(const TextBank&) const = default;
};

/// Mean over templates per state, then l2-normalize. Stores the result in
/// bank.pooled and returns it.
inline Tensor2 pool_prompts(TextBank& bank) {
  if (bank.templates_per_state == 0 || bank.normal_templates.rows() == 0 || bank.abnormal_templates.rows() == 0) {
    throw ValidationError("pool_prompts: at least one template per state is required");
  }
  if (bank.normal_templates.rows() != bank.templates_per_state ||
      bank.abnormal_templates.rows() != bank.templates_per_state || bank.normal_templates.cols() != bank.d_t ||
      bank.abnormal_templates.cols() != bank.d_t) {
    throw DimensionError("pool_prompts: template tensors do not match d_t/templates_per_state");
  }
  Tensor2 mean(2, bank.d_t);
  const Tensor2* states[2] = {&bank.normal_templates, &bank.abnormal_templates};
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t j = 0; j < bank.d_t; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < bank.templates_per_state; ++t) acc += (*states[s])(t, j);
      mean(s, j) = acc / static_cast<double>(bank.templates_per_state);
    }
  }
  bank.pooled = l2_normalize_rows(mean);
  return bank.pooled;
}

inline TextBank make_textbank(Tensor2 normal, Tensor2 abnormal) {
  if (normal.cols() != abnormal.cols() || normal.rows() != abnormal.rows()) {
    throw DimensionError("make_textbank: normal and abnormal template sets differ in shape");
  }
  TextBank bank;
  bank.d_t = normal.cols();
  bank.templates_per_state = normal.rows();
  bank.normal_templates = std::move(normal);
  bank.abnormal_templates = std::move(abnormal);
  pool_prompts(bank);
  return bank;
}

inline std::vector<Violation> validate_textbank(const TextBank& bank, double tol = 1e-6) {
  std::vector<Violation> out;
  if (bank.d_t == 0) out.push_back({"d_t", "must be >= 1"});
  if (bank.templates_per_state == 0) out.push_back({"templates_per_state", "must be >= 1"});
  auto check_shape = [&](const Tensor2& t, std::size_t r, const char* name) {
    if (t.rows() != r || t.cols() != bank.d_t) out.push_back({name, "shape does not match header"});
  };
  check_shape(bank.normal_templates, bank.templates_per_state, "normal_templates");
  check_shape(bank.abnormal_templates, bank.templates_per_state, "abnormal_templates");
  check_shape(bank.pooled, 2, "pooled");
  if (!out.empty()) return out;
  for (const Tensor2* t : {&bank.normal_templates, &bank.abnormal_templates, &bank.pooled}) {
    if (!std::all_of(t->values().begin(), t->values().end(), [](double v) { return std::isfinite(v); })) {
      out.push_back({"templates", "contain non-finite values"});
      return out;
    }
  }
  for (std::size_t s = 0; s < 2; ++s) {
    if (std::abs(detail::norm(bank.pooled.row(s)) - 1.0) > tol) {
      out.push_back({"pooled", "row " + std::to_string(s) + " is not unit-norm"});
    }
  }
  TextBank copy = bank;
  const Tensor2 expect = pool_prompts(copy);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (std::abs(expect.values()[i] - bank.pooled.values()[i]) > tol) {
      out.push_back({"pooled", "does not equal the normalized template mean"});
      break;
    }
  }
  return out;
}

inline std::vector<std::uint8_t> encode_textbank(const TextBank& bank) {
  if (auto v = validate_textbank(bank); !v.empty()) {
    throw ValidationError("refusing to write invalid text bank: " + detail::join_violations(v));
  }
  ByteWriter w;
  w.tag("ADTX");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(bank.d_t));
  w.u32(static_cast<std::uint32_t>(bank.templates_per_state));
  for (const Tensor2* t : {&bank.normal_templates, &bank.abnormal_templates, &bank.pooled}) {
    for (double v : t->values()) w.f32(static_cast<float>(v));
  }
  return w.buffer();
}

inline TextBank decode_textbank_unchecked(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader r(bytes, source);
  r.expect_tag("ADTX");
  const std::size_t version_at = r.offset();
  if (r.u32("version") != kFeatureVersion) r.fail_at(version_at, "unsupported version");
  TextBank bank;
  bank.d_t = r.u32("d_t");
  bank.templates_per_state = r.u32("templates_per_state");
  const std::uint64_t payload = (2 * std::uint64_t{bank.templates_per_state} + 2) * bank.d_t * 4;
  if (payload > r.remaining()) r.fail("truncated: header announces " + std::to_string(payload) + " payload bytes");
  auto read_block = [&](std::size_t rows, const char* what) {
    Tensor2 t(rows, bank.d_t);
    for (double& v : t.values()) v = r.f32(what);
    return t;
  };
  bank.normal_templates = read_block(bank.templates_per_state, "normal templates");
  bank.abnormal_templates = read_block(bank.templates_per_state, "abnormal templates");
  bank.pooled = read_block(2, "pooled");
  r.expect_end();
  return bank;
}

inline TextBank decode_textbank(std::span<const std::uint8_t> bytes, const std::string& source) {
  TextBank bank = decode_textbank_unchecked(bytes, source);
  if (auto v = validate_textbank(bank, 1e-5); !v.empty()) {
    throw ValidationError(source + ": " + detail::join_violations(v));
  }
  return bank;
}

inline void write_textbank(const TextBank& bank, const std::filesystem::path& path) {
  write_file_bytes(path, encode_textbank(bank));
}

inline TextBank read_textbank(const std::filesystem::path& path) {
  return decode_textbank(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Manifest: one `<split>\t<category>\t<relative path>` per line. Lines
// starting with '#' are comments; `# seed=N` records the generator seed.

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

struct ManifestEntry {
  Split split = Split::Train;
  std::string category;
  std::string path;  // relative to the manifest's directory

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::optional<std::uint64_t> seed;
  std::filesystem::path base_dir;

  std::vector<ManifestEntry> split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (e.split == s) out.push_back(e);
    }
    return out;
  }

  std::filesystem::path resolve(const ManifestEntry& e) const { return base_dir / e.path; }
};

inline std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  if (m.seed) os << "# seed=" << *m.seed << '\n';
  for (const auto& e : m.entries) os << split_name(e.split) << '\t' << e.category << '\t' << e.path << '\n';
  return os.str();
}

inline DatasetManifest parse_manifest(const std::string& text, const std::string& source = "manifest") {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (line[0] == '#') {
      const std::string key = "# seed=";
      if (line.rfind(key, 0) == 0) {
        std::uint64_t seed = 0;
        const char* first = line.data() + key.size();
        const char* last = line.data() + line.size();
        auto [p, ec] = std::from_chars(first, last, seed);
        if (ec != std::errc() || p != last) throw FormatError(where + ": malformed seed comment");
        m.seed = seed;
      }
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError(where + ": expected <split>\\t<category>\\t<path>");
    ManifestEntry e;
    const std::string split = line.substr(0, t1);
    if (split == "train") {
      e.split = Split::Train;
    } else if (split == "test") {
      e.split = Split::Test;
    } else {
      throw ValidationError(where + ": split must be train or test, got '" + split + "'");
    }
    e.category = line.substr(t1 + 1, t2 - t1 - 1);
    e.path = line.substr(t2 + 1);
    if (e.path.empty()) throw FormatError(where + ": empty path");
    if (std::find(seen.begin(), seen.end(), e.path) != seen.end()) {
      throw ValidationError(where + ": duplicate path " + e.path);
    }
    seen.push_back(e.path);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  DatasetManifest m = parse_manifest(read_file_text(path), path.string());
  m.base_dir = path.parent_path();
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  write_file_text(path, format_manifest(m));
}

}  // namespace anomhead
