#pragma once

// Synthetic feature bundles with a planted, linearly separable anomaly
// signal. Abnormal patches carry u_a, normal patches u_n (orthonormal), each
// scaled by signal_strength, plus independent Gaussian noise per layer.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "anomhead/errors.hpp"
#include "anomhead/feature_io.hpp"
#include "anomhead/numerics.hpp"
#include "anomhead/rng.hpp"

namespace anomhead {

struct SynthSpec {
  std::size_t n_train = 64;
  std::size_t n_test = 32;
  std::size_t grid = 8;
  std::size_t image_size = 32;
  std::size_t d_v = 32;
  std::size_t d_t = 24;
  std::size_t n_layers = 4;
  std::size_t templates_per_state = 4;
  double anomaly_rate = 0.15;
  double signal_strength = 1.0;
  double noise_per_layer = 0.35;
  double text_noise = 0.05;
  std::uint64_t seed = 0;
};

inline void validate_synth_spec(const SynthSpec& s) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("synth spec: ") + what);
  };
  need(s.n_train >= 1 && s.n_test >= 1, "n_train and n_test must be >= 1");
  need(s.grid >= 1 && s.image_size >= s.grid, "grid must be >= 1 and image_size >= grid");
  need(s.d_v >= 2 && s.d_t >= 1, "d_v must be >= 2 and d_t >= 1");
  need(s.n_layers >= 1 && s.templates_per_state >= 1, "n_layers and templates_per_state must be >= 1");
  need(s.anomaly_rate > 0.0 && s.anomaly_rate < 1.0, "anomaly_rate must be in (0,1)");
  need(s.signal_strength >= 0.0 && std::isfinite(s.signal_strength), "signal_strength must be >= 0");
  need(s.noise_per_layer >= 0.0 && s.text_noise >= 0.0, "noise levels must be >= 0");
}

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<FeatureBundle> bundles;  // parallel to manifest.entries
  TextBank bank;
};

namespace detail {

inline double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  const double n = norm(v);
  for (double& x : v) x /= n;
  return v;
}

// Patch-level anomaly labels: one random rectangle of roughly `rate` area.
inline std::vector<std::uint8_t> random_rect_mask(Rng& rng, std::size_t grid, double rate) {
  const double area = std::max(1.0, rate * static_cast<double>(grid * grid));
  const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  auto h = static_cast<std::size_t>(std::llround(std::sqrt(area * aspect)));
  h = std::clamp<std::size_t>(h, 1, grid);
  auto w = static_cast<std::size_t>(std::llround(area / static_cast<double>(h)));
  w = std::clamp<std::size_t>(w, 1, grid);
  const std::size_t top = static_cast<std::size_t>(rng.below(grid - h + 1));
  const std::size_t left = static_cast<std::size_t>(rng.below(grid - w + 1));
  std::vector<std::uint8_t> labels(grid * grid, 0);
  for (std::size_t i = top; i < top + h; ++i) {
    for (std::size_t j = left; j < left + w; ++j) labels[i * grid + j] = 1;
  }
  return labels;
}

}  // namespace detail

inline FeatureBundle synth_bundle(const SynthSpec& s, const std::vector<double>& u_n, const std::vector<double>& u_a,
                                  std::uint64_t stream) {
  Rng rng(detail::stream_seed(s.seed, stream));
  const std::size_t n = s.grid * s.grid;
  const auto labels = detail::random_rect_mask(rng, s.grid, s.anomaly_rate);

  FeatureBundle b;
  b.image_h = b.image_w = static_cast<std::uint32_t>(s.image_size);
  b.grid_h = b.grid_w = static_cast<std::uint32_t>(s.grid);
  for (std::size_t l = 0; l < s.n_layers; ++l) {
    b.layer_indices.push_back(static_cast<std::uint32_t>(6 * (l + 1)));
    Tensor2 t(n, s.d_v);
    for (std::size_t p = 0; p < n; ++p) {
      const auto& u = labels[p] ? u_a : u_n;
      for (std::size_t k = 0; k < s.d_v; ++k) {
        t(p, k) = detail::f32_round(u[k] * s.signal_strength + rng.normal(0.0, s.noise_per_layer));
      }
    }
    b.patch_tokens.push_back(std::move(t));
  }
  const Tensor2& last = b.patch_tokens.back();
  b.cls_token.assign(s.d_v, 0.0);
  for (std::size_t k = 0; k < s.d_v; ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p) acc += last(p, k);
    b.cls_token[k] = detail::f32_round(acc / static_cast<double>(n));
  }
  b.mask_present = true;
  b.mask.resize(s.image_size * s.image_size);
  for (std::size_t y = 0; y < s.image_size; ++y) {
    for (std::size_t x = 0; x < s.image_size; ++x) {
      const std::size_t pi = y * s.grid / s.image_size;
      const std::size_t pj = x * s.grid / s.image_size;
      b.mask[y * s.image_size + x] = labels[pi * s.grid + pj];
    }
  }
  return b;
}

inline SynthDataset synth_dataset(const SynthSpec& s) {
  validate_synth_spec(s);
  Rng rng(detail::stream_seed(s.seed, 0xFFFF'FFFFULL));

  // Orthonormal state directions in visual space.
  auto u_n = detail::random_unit(rng, s.d_v);
  auto u_a = detail::random_unit(rng, s.d_v);
  const double proj = detail::dot(u_a, u_n);
  for (std::size_t k = 0; k < s.d_v; ++k) u_a[k] -= proj * u_n[k];
  const double na = detail::norm(u_a);
  for (double& x : u_a) x /= na;

  // Fixed random linear map into text space.
  Tensor2 proj_map(s.d_v, s.d_t);
  const double scale = 1.0 / std::sqrt(static_cast<double>(s.d_v));
  for (double& x : proj_map.values()) x = rng.normal(0.0, scale);
  auto embed = [&](const std::vector<double>& u) {
    Tensor2 t(s.templates_per_state, s.d_t);
    for (std::size_t r = 0; r < s.templates_per_state; ++r) {
      for (std::size_t j = 0; j < s.d_t; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < s.d_v; ++k) acc += u[k] * proj_map(k, j);
        t(r, j) = detail::f32_round(acc + rng.normal(0.0, s.text_noise));
      }
    }
    return t;
  };
  SynthDataset ds;
  Tensor2 normal = embed(u_n);
  Tensor2 abnormal = embed(u_a);
  ds.bank = make_textbank(std::move(normal), std::move(abnormal));
  for (double& v : ds.bank.pooled.values()) v = detail::f32_round(v);

  ds.manifest.seed = s.seed;
  std::uint64_t stream = 0;
  auto emit = [&](Split split, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::ostringstream name;
      name << split_name(split) << '/' << std::setw(4) << std::setfill('0') << i << ".adft";
      ds.manifest.entries.push_back({split, "synthetic", name.str()});
      ds.bundles.push_back(synth_bundle(s, u_n, u_a, stream++));
    }
  };
  emit(Split::Train, s.n_train);
  emit(Split::Test, s.n_test);
  return ds;
}

/// Writes bundles, manifest.tsv and textbank.adtx under `dir`.
inline void write_synth_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.bundles.size(); ++i) {
    write_bundle(ds.bundles[i], dir / ds.manifest.entries[i].path);
  }
  write_manifest(ds.manifest, dir / "manifest.tsv");
  write_textbank(ds.bank, dir / "textbank.adtx");
}

}  // namespace anomhead
