#pragma once

// Bottleneck adapters: out = leaky_relu(x W1 + b1) W2 + b2, with no residual.
//
// Checkpoint (.adck), little-endian:
//   "ADCK" u32 version=1 32-byte architecture hash (SHA-256) u32 adapter count
//   per adapter: u16 name length, name bytes, u32 d_in, u32 d_hidden,
//   u32 d_out, f64 slope, then W1, b1, W2, b2 as f64

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "anomhead/binary_io.hpp"
#include "anomhead/config.hpp"
#include "anomhead/errors.hpp"
#include "anomhead/numerics.hpp"
#include "anomhead/rng.hpp"

namespace anomhead {

struct Adapter {
  std::string name;
  std::size_t d_in = 0;
  std::size_t d_hidden = 0;
  std::size_t d_out = 0;
  double slope = 0.01;
  Tensor2 w1;  // d_in x d_hidden
  std::vector<double> b1;
  Tensor2 w2;  // d_hidden x d_out
  std::vector<double> b2;

  Adapter() = default;
  Adapter(std::string n, std::size_t in, std::size_t hidden, std::size_t out, double s)
      : name(std::move(n)), d_in(in), d_hidden(hidden), d_out(out), slope(s), w1(in, hidden), b1(hidden, 0.0),
        w2(hidden, out), b2(out, 0.0) {}

  std::size_t param_count() const noexcept { return d_in * d_hidden + d_hidden + d_hidden * d_out + d_out; }

  // Flat order: W1 (row-major), b1, W2 (row-major), b2.
  void copy_params_to(std::span<double> out) const {
    auto it = out.begin();
    it = std::copy(w1.values().begin(), w1.values().end(), it);
    it = std::copy(b1.begin(), b1.end(), it);
    it = std::copy(w2.values().begin(), w2.values().end(), it);
    std::copy(b2.begin(), b2.end(), it);
  }

  void copy_params_from(std::span<const double> in) {
    auto it = in.begin();
    auto take = [&](auto& dst) {
      std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
      it += static_cast<std::ptrdiff_t>(dst.size());
    };
    take(w1.values());
    take(b1);
    take(w2.values());
    take(b2);
  }

  bool operator==(const Adapter&) const = default;
};

struct AdapterActivations {
  Tensor2 pre;     // x W1 + b1
  Tensor2 hidden;  // leaky_relu(pre)
  Tensor2 out;
};

inline AdapterActivations adapt_forward(const Adapter& a, const Tensor2& x) {
  if (x.cols() != a.d_in) {
    throw DimensionError("adapter '" + a.name + "': input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(a.d_in));
  }
  AdapterActivations act;
  act.pre = linear(x, a.w1, a.b1);
  act.hidden = leaky_relu(act.pre, a.slope);
  act.out = linear(act.hidden, a.w2, a.b2);
  return act;
}

inline Tensor2 adapt(const Adapter& a, const Tensor2& x) { return adapt_forward(a, x).out; }

struct AdapterGrad {
  Tensor2 x;
  std::vector<double> params;  // W1, b1, W2, b2
};

inline AdapterGrad adapt_backward(const Adapter& a, const Tensor2& x, const AdapterActivations& act,
                                  const Tensor2& upstream) {
  if (upstream.rows() != x.rows() || upstream.cols() != a.d_out) {
    throw DimensionError("adapter '" + a.name + "': upstream gradient shape mismatch");
  }
  const LinearGrad g2 = linear_vjp(act.hidden, a.w2, upstream);
  const Tensor2 dpre = leaky_relu_vjp(act.pre, a.slope, g2.x);
  LinearGrad g1 = linear_vjp(x, a.w1, dpre);

  AdapterGrad g;
  g.x = std::move(g1.x);
  g.params.reserve(a.param_count());
  g.params.insert(g.params.end(), g1.weight.values().begin(), g1.weight.values().end());
  g.params.insert(g.params.end(), g1.bias.begin(), g1.bias.end());
  g.params.insert(g.params.end(), g2.weight.values().begin(), g2.weight.values().end());
  g.params.insert(g.params.end(), g2.bias.begin(), g2.bias.end());
  return g;
}

inline AdapterGrad adapt_backward(const Adapter& a, const Tensor2& x, const Tensor2& upstream) {
  return adapt_backward(a, x, adapt_forward(a, x), upstream);
}

/// All trainable parameters of the head. Flat order: patch adapters in stage
/// order, then the CLS adapter, then the text adapter.
struct AdapterStack {
  std::vector<std::uint32_t> layer_indices;  // one per patch adapter
  std::vector<Adapter> patch_adapters;
  Adapter cls_adapter;
  Adapter text_adapter;
  std::size_t d_e = 0;

  std::size_t param_count() const {
    std::size_t n = cls_adapter.param_count() + text_adapter.param_count();
    for (const auto& a : patch_adapters) n += a.param_count();
    return n;
  }

  std::size_t cls_offset() const {
    std::size_t n = 0;
    for (const auto& a : patch_adapters) n += a.param_count();
    return n;
  }
  std::size_t text_offset() const { return cls_offset() + cls_adapter.param_count(); }

  std::vector<double> flat_params() const {
    std::vector<double> flat(param_count());
    std::span<double> out(flat);
    std::size_t off = 0;
    for (const Adapter* a : adapters()) {
      a->copy_params_to(out.subspan(off, a->param_count()));
      off += a->param_count();
    }
    return flat;
  }

  void set_flat_params(std::span<const double> flat) {
    if (flat.size() != param_count()) throw DimensionError("set_flat_params: parameter count mismatch");
    std::size_t off = 0;
    for (Adapter* a : adapters()) {
      a->copy_params_from(flat.subspan(off, a->param_count()));
      off += a->param_count();
    }
  }

  std::vector<const Adapter*> adapters() const {
    std::vector<const Adapter*> v;
    for (const auto& a : patch_adapters) v.push_back(&a);
    v.push_back(&cls_adapter);
    v.push_back(&text_adapter);
    return v;
  }
  std::vector<Adapter*> adapters() {
    std::vector<Adapter*> v;
    for (auto& a : patch_adapters) v.push_back(&a);
    v.push_back(&cls_adapter);
    v.push_back(&text_adapter);
    return v;
  }

  bool operator==(const AdapterStack&) const = default;
};

inline std::string patch_adapter_name(std::uint32_t layer) { return "patch.L" + std::to_string(layer); }

inline double init_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline AdapterStack init_stack(const TrainConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Rng rng(seed);
  auto make = [&](std::string name, std::size_t d_in) {
    Adapter a(std::move(name), d_in, cfg.hidden_for(d_in), cfg.d_e, cfg.slope);
    if (a.d_hidden == 0) throw ConfigError("adapter hidden dimension resolved to 0");
    const double a1 = init_bound(a.d_in, a.d_hidden);
    for (double& w : a.w1.values()) w = rng.uniform(-a1, a1);
    const double a2 = init_bound(a.d_hidden, a.d_out);
    for (double& w : a.w2.values()) w = rng.uniform(-a2, a2);
    return a;
  };
  AdapterStack s;
  s.d_e = cfg.d_e;
  s.layer_indices = cfg.layer_indices;
  for (auto l : cfg.layer_indices) s.patch_adapters.push_back(make(patch_adapter_name(l), cfg.d_v));
  s.cls_adapter = make("cls", cfg.d_v);
  s.text_adapter = make("text", cfg.d_t);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

using ArchitectureHash = std::array<std::uint8_t, 32>;

// Canonical description of every config field that shapes the stack.
inline std::string architecture_string(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "d_v=" << cfg.d_v << ";d_t=" << cfg.d_t << ";d_e=" << cfg.d_e << ";hidden_v=" << cfg.hidden_for(cfg.d_v)
     << ";hidden_t=" << cfg.hidden_for(cfg.d_t) << ";slope_bits=" << std::bit_cast<std::uint64_t>(cfg.slope)
     << ";layers=";
  for (std::size_t i = 0; i < cfg.layer_indices.size(); ++i) os << (i ? "," : "") << cfg.layer_indices[i];
  return os.str();
}

inline ArchitectureHash architecture_hash(const TrainConfig& cfg) {
  const std::string s = architecture_string(cfg);
  ArchitectureHash h{};
  unsigned int len = 0;
  if (EVP_Digest(s.data(), s.size(), h.data(), &len, EVP_sha256(), nullptr) != 1 || len != h.size()) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return h;
}

inline std::vector<std::uint8_t> encode_checkpoint(const AdapterStack& stack, const ArchitectureHash& hash) {
  ByteWriter w;
  w.tag("ADCK");
  w.u32(1);
  w.bytes(hash);
  const auto all = stack.adapters();
  w.u32(static_cast<std::uint32_t>(all.size()));
  for (const Adapter* a : all) {
    w.u16(static_cast<std::uint16_t>(a->name.size()));
    w.tag(a->name);
    w.u32(static_cast<std::uint32_t>(a->d_in));
    w.u32(static_cast<std::uint32_t>(a->d_hidden));
    w.u32(static_cast<std::uint32_t>(a->d_out));
    w.f64(a->slope);
    std::vector<double> flat(a->param_count());
    a->copy_params_to(flat);
    for (double v : flat) w.f64(v);
  }
  return w.buffer();
}

struct Checkpoint {
  ArchitectureHash hash{};
  AdapterStack stack;
};

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader r(bytes, source);
  r.expect_tag("ADCK");
  const std::size_t version_at = r.offset();
  if (r.u32("version") != 1) r.fail_at(version_at, "unsupported version");
  Checkpoint ck;
  auto h = r.bytes(32, "config hash");
  std::copy(h.begin(), h.end(), ck.hash.begin());
  const std::uint32_t count = r.u32("adapter count");
  if (count < 2) r.fail("checkpoint must hold at least the cls and text adapters");
  std::vector<Adapter> adapters;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16("name length");
    auto nb = r.bytes(len, "adapter name");
    std::string name(nb.begin(), nb.end());
    const std::uint32_t d_in = r.u32("d_in");
    const std::uint32_t d_hidden = r.u32("d_hidden");
    const std::uint32_t d_out = r.u32("d_out");
    const double slope = r.f64("slope");
    if (d_in > (1u << 24) || d_hidden > (1u << 24) || d_out > (1u << 24)) r.fail("implausible adapter dimensions");
    const std::uint64_t n_params = std::uint64_t{d_in} * d_hidden + d_hidden + std::uint64_t{d_hidden} * d_out + d_out;
    if (n_params * 8 > r.remaining()) r.fail("truncated parameters of adapter '" + name + "'");
    Adapter a(name, d_in, d_hidden, d_out, slope);
    std::vector<double> flat(a.param_count());
    for (double& v : flat) v = r.f64("parameter");
    a.copy_params_from(flat);
    adapters.push_back(std::move(a));
  }
  r.expect_end();

  const std::size_t n_patch = adapters.size() - 2;
  if (adapters[n_patch].name != "cls" || adapters[n_patch + 1].name != "text") {
    throw FormatError(source + ": adapters must end with 'cls' and 'text'");
  }
  AdapterStack& s = ck.stack;
  s.d_e = adapters[n_patch].d_out;
  for (std::size_t i = 0; i < n_patch; ++i) {
    const std::string& name = adapters[i].name;
    if (name.rfind("patch.L", 0) != 0) throw FormatError(source + ": unexpected adapter name '" + name + "'");
    std::uint32_t layer = 0;
    const char* first = name.data() + 7;
    const char* last = name.data() + name.size();
    auto [end, ec] = std::from_chars(first, last, layer);
    if (ec != std::errc() || end != last || first == last) {
      throw FormatError(source + ": bad layer index in adapter name '" + name + "'");
    }
    s.layer_indices.push_back(layer);
    s.patch_adapters.push_back(std::move(adapters[i]));
  }
  s.cls_adapter = std::move(adapters[n_patch]);
  s.text_adapter = std::move(adapters[n_patch + 1]);
  return ck;
}

inline void save_checkpoint(const AdapterStack& stack, const TrainConfig& cfg, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(stack, architecture_hash(cfg)));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

/// Loads a checkpoint and rejects it unless it was written for the same
/// architecture as `cfg`.
inline AdapterStack load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.hash != architecture_hash(cfg)) {
    throw CompatError(path.string() + ": checkpoint was written for a different model configuration (" +
                      architecture_string(cfg) + " does not match)");
  }
  return std::move(ck.stack);
}

}  // namespace anomhead
