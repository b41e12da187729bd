#pragma once

// Cross-modal anomaly maps, CLS-patch calibration scores, stage fusion and
// the inference pipeline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "anomhead/adapters.hpp"
#include "anomhead/config.hpp"
#include "anomhead/errors.hpp"
#include "anomhead/feature_io.hpp"
#include "anomhead/numerics.hpp"

namespace anomhead {

inline constexpr std::size_t kNormalState = 0;
inline constexpr std::size_t kAbnormalState = 1;

/// Dense per-pixel anomaly scores in [0,1] at image resolution.
using AnomalyMap = ScoreGrid;

/// One stage of the cross-modal head: per-patch state probabilities and the
/// abnormal column as a patch grid.
struct StageMap {
  std::uint32_t layer = 0;
  Tensor2 probs;   // N x 2
  ScoreGrid grid;  // grid_h x grid_w, abnormal probability
};

/// Forward intermediates of one stage, kept for the backward pass.
struct StageForward {
  AdapterActivations patch;  // adapted patch tokens in patch.out
  Tensor2 cosine;            // N x 2
  StageMap map;
};

inline StageForward cmcl_stage_forward(const Tensor2& patch_tokens, const Adapter& stage_adapter,
                                       const Tensor2& adapted_text, double temperature, std::size_t grid_h,
                                       std::size_t grid_w) {
  if (patch_tokens.rows() != grid_h * grid_w) {
    throw DimensionError("stage map: " + std::to_string(patch_tokens.rows()) + " patch rows for a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  StageForward f;
  f.patch = adapt_forward(stage_adapter, patch_tokens);
  f.cosine = cosine_rows(f.patch.out, adapted_text);
  f.map.probs = softmax_over_states(f.cosine, temperature);
  f.map.grid = column_grid(f.map.probs, kAbnormalState, grid_h, grid_w);
  return f;
}

inline StageMap cmcl_stage_map(const Tensor2& patch_tokens, const Adapter& stage_adapter, const Tensor2& text_pooled,
                               const Adapter& text_adapter, double temperature, std::size_t grid_h,
                               std::size_t grid_w) {
  const Tensor2 adapted_text = adapt(text_adapter, text_pooled);
  return cmcl_stage_forward(patch_tokens, stage_adapter, adapted_text, temperature, grid_h, grid_w).map;
}

inline ScoreGrid fuse_stages(const std::vector<ScoreGrid>& grids) {
  if (grids.empty()) throw ValidationError("fuse_stages: no stage grids");
  ScoreGrid out(grids.front().height, grids.front().width);
  for (const auto& g : grids) {
    if (g.height != out.height || g.width != out.width) throw DimensionError("fuse_stages: grid shapes differ");
  }
  const double n = static_cast<double>(grids.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (const auto& g : grids) acc += g.values[i];
    out.values[i] = acc / n;
  }
  return out;
}

/// Raw cosine between the adapted CLS token and every adapted patch token,
/// reshaped onto the patch grid. Values lie in [-1, 1].
inline ScoreGrid aacm_scores(const Tensor2& patch_tokens_final, const Adapter& stage_adapter_final,
                             std::span<const double> cls_token, const Adapter& cls_adapter, std::size_t grid_h,
                             std::size_t grid_w) {
  if (patch_tokens_final.rows() != grid_h * grid_w) throw DimensionError("aacm_scores: patch rows do not match grid");
  const Tensor2 cls(1, cls_token.size(), std::vector<double>(cls_token.begin(), cls_token.end()));
  const Tensor2 c = adapt(cls_adapter, cls);
  const Tensor2 p = adapt(stage_adapter_final, patch_tokens_final);
  return column_grid(cosine_rows(p, c), 0, grid_h, grid_w);
}

// Separable Gaussian blur, radius ceil(3 sigma), replicated borders.
inline ScoreGrid gaussian_smooth(const ScoreGrid& src, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  const auto h = static_cast<std::ptrdiff_t>(src.height);
  const auto w = static_cast<std::ptrdiff_t>(src.width);
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return std::clamp<std::ptrdiff_t>(v, 0, hi - 1); };
  ScoreGrid tmp(src.height, src.width);
  for (std::ptrdiff_t i = 0; i < h; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               src.values[static_cast<std::size_t>(i * w + clampi(j + k, w))];
      }
      tmp.values[static_cast<std::size_t>(i * w + j)] = acc;
    }
  }
  ScoreGrid out(src.height, src.width);
  for (std::ptrdiff_t i = 0; i < h; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               tmp.values[static_cast<std::size_t>(clampi(i + k, h) * w + j)];
      }
      out.values[static_cast<std::size_t>(i * w + j)] = acc;
    }
  }
  return out;
}

/// Checks that a bundle and text bank can be fed through `stack`.
inline void check_compatible(const FeatureBundle& bundle, const AdapterStack& stack, const TextBank& bank,
                             const std::string& source = "bundle") {
  if (stack.patch_adapters.empty()) throw CompatError("adapter stack has no patch adapters");
  for (std::size_t s = 0; s < stack.layer_indices.size(); ++s) {
    const std::uint32_t layer = stack.layer_indices[s];
    if (std::find(bundle.layer_indices.begin(), bundle.layer_indices.end(), layer) == bundle.layer_indices.end()) {
      throw CompatError(source + ": no patch tokens for configured layer " + std::to_string(layer));
    }
    if (stack.patch_adapters[s].d_in != bundle.d_v()) {
      throw CompatError(source + ": d_v=" + std::to_string(bundle.d_v()) + " but stage adapter expects " +
                        std::to_string(stack.patch_adapters[s].d_in));
    }
  }
  if (stack.cls_adapter.d_in != bundle.d_v()) throw CompatError(source + ": CLS dimension does not match the stack");
  if (stack.text_adapter.d_in != bank.d_t) {
    throw CompatError("text bank d_t=" + std::to_string(bank.d_t) + " but text adapter expects " +
                      std::to_string(stack.text_adapter.d_in));
  }
}

struct InferResult {
  AnomalyMap map;
  std::vector<StageMap> stages;
};

/// Test-time pipeline. Reads only the patch and text adapters; the CLS
/// adapter takes part in training only.
inline InferResult infer(const FeatureBundle& bundle, const AdapterStack& stack, const TextBank& bank,
                         const TrainConfig& cfg) {
  check_compatible(bundle, stack, bank);
  if (cfg.layer_indices != stack.layer_indices) {
    throw CompatError("configured layer_indices do not match the adapter stack");
  }
  const Tensor2 adapted_text = adapt(stack.text_adapter, bank.pooled);
  InferResult r;
  std::vector<ScoreGrid> grids;
  for (std::size_t s = 0; s < stack.layer_indices.size(); ++s) {
    const std::uint32_t layer = stack.layer_indices[s];
    StageForward f = cmcl_stage_forward(bundle.tokens_for_layer(layer), stack.patch_adapters[s], adapted_text,
                                        cfg.temperature, bundle.grid_h, bundle.grid_w);
    f.map.layer = layer;
    grids.push_back(f.map.grid);
    r.stages.push_back(std::move(f.map));
  }
  r.map = bilinear_resize(fuse_stages(grids), bundle.image_h, bundle.image_w);
  if (cfg.smoothing) r.map = gaussian_smooth(r.map, cfg.smoothing_sigma);
  return r;
}

/// Training-free reference map: l2-normalized final-layer patch tokens,
/// averaged over channels, min-max scaled over the grid and upsampled. A
/// constant grid maps to 0.5 everywhere.
inline AnomalyMap baseline_map(const FeatureBundle& bundle) {
  if (auto v = validate_bundle(bundle); !v.empty()) throw ValidationError("baseline_map: invalid bundle");
  const Tensor2 normed = l2_normalize_rows(bundle.patch_tokens.back());
  ScoreGrid grid(bundle.grid_h, bundle.grid_w);
  for (std::size_t i = 0; i < normed.rows(); ++i) {
    double acc = 0.0;
    for (double v : normed.row(i)) acc += v;
    grid.values[i] = acc / static_cast<double>(normed.cols());
  }
  const auto [lo, hi] = std::minmax_element(grid.values.begin(), grid.values.end());
  const double mn = *lo;
  const double range = *hi - mn;
  for (double& v : grid.values) v = range > 0.0 ? (v - mn) / range : 0.5;
  return bilinear_resize(grid, bundle.image_h, bundle.image_w);
}

}  // namespace anomhead
