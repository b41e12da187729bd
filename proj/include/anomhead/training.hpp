#pragma once

// Adam training of the adapter stack. The per-sample backward pass composes
// the kernel VJPs by hand; there is no tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "anomhead/adapters.hpp"
#include "anomhead/config.hpp"
#include "anomhead/feature_io.hpp"
#include "anomhead/head.hpp"
#include "anomhead/losses.hpp"
#include "anomhead/numerics.hpp"
#include "anomhead/rng.hpp"

namespace anomhead {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const TrainConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and moment lengths differ");
  }
  ++state.step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

struct SampleLoss {
  double total = 0.0;
  double cm = 0.0;
  double aacm = 0.0;
  std::vector<double> grad;  // d total / d flat stack parameters
};

/// Forward and backward pass of the full objective on one bundle. The CLS
/// calibration term uses the last configured stage.
inline SampleLoss sample_loss(const FeatureBundle& bundle, const AdapterStack& stack, const TextBank& bank,
                              const TrainConfig& cfg) {
  if (!bundle.mask_present) throw ValidationError("training bundle has no mask");
  check_compatible(bundle, stack, bank);
  const LossConfig& lc = cfg.loss;
  const std::size_t n_stages = stack.patch_adapters.size();
  const ScoreGrid mask = bundle.mask_grid();

  const AdapterActivations text = adapt_forward(stack.text_adapter, bank.pooled);
  std::vector<StageForward> fwd;
  std::vector<ScoreGrid> grids;
  fwd.reserve(n_stages);
  for (std::size_t s = 0; s < n_stages; ++s) {
    fwd.push_back(cmcl_stage_forward(bundle.tokens_for_layer(stack.layer_indices[s]), stack.patch_adapters[s],
                                     text.out, cfg.temperature, bundle.grid_h, bundle.grid_w));
    grids.push_back(fwd.back().map.grid);
  }
  const StageLoss cm = loss_cm(grids, mask, lc);

  const Tensor2 cls_in(1, bundle.d_v(), bundle.cls_token);
  const AdapterActivations cls = adapt_forward(stack.cls_adapter, cls_in);
  const Tensor2& final_patches = fwd.back().patch.out;
  const Tensor2 cls_cos = cosine_rows(final_patches, cls.out);
  const LossValue aacm = loss_aacm(column_grid(cls_cos, 0, bundle.grid_h, bundle.grid_w), mask, lc);

  SampleLoss out;
  out.cm = cm.value;
  out.aacm = aacm.value;
  out.total = total_loss(cm.value, aacm.value, lc);
  out.grad.assign(stack.param_count(), 0.0);

  // Upstream gradients w.r.t. the adapted patch tokens of every stage.
  Tensor2 d_text(text.out.rows(), text.out.cols());
  std::vector<Tensor2> d_patch;
  d_patch.reserve(n_stages);
  for (std::size_t s = 0; s < n_stages; ++s) {
    const StageForward& f = fwd[s];
    Tensor2 d_probs(f.map.probs.rows(), f.map.probs.cols());
    for (std::size_t i = 0; i < d_probs.rows(); ++i) d_probs(i, kAbnormalState) = lc.lambda_cm * cm.grad[s].values[i];
    const Tensor2 d_cos = softmax_over_states_vjp(f.map.probs, cfg.temperature, d_probs);
    CosineGrad cg = cosine_rows_vjp(f.patch.out, text.out, d_cos);
    for (std::size_t i = 0; i < d_text.size(); ++i) d_text.values()[i] += cg.b.values()[i];
    d_patch.push_back(std::move(cg.a));
  }

  Tensor2 d_cls_cos(cls_cos.rows(), 1);
  for (std::size_t i = 0; i < d_cls_cos.rows(); ++i) d_cls_cos(i, 0) = lc.lambda_aacm * aacm.grad.values[i];
  const CosineGrad cls_g = cosine_rows_vjp(final_patches, cls.out, d_cls_cos);
  for (std::size_t i = 0; i < cls_g.a.size(); ++i) d_patch.back().values()[i] += cls_g.a.values()[i];

  std::size_t off = 0;
  auto scatter = [&](const std::vector<double>& g, std::size_t at) {
    std::copy(g.begin(), g.end(), out.grad.begin() + static_cast<std::ptrdiff_t>(at));
  };
  for (std::size_t s = 0; s < n_stages; ++s) {
    const AdapterGrad g = adapt_backward(stack.patch_adapters[s], bundle.tokens_for_layer(stack.layer_indices[s]),
                                         fwd[s].patch, d_patch[s]);
    scatter(g.params, off);
    off += stack.patch_adapters[s].param_count();
  }
  scatter(adapt_backward(stack.cls_adapter, cls_in, cls, cls_g.b).params, stack.cls_offset());
  scatter(adapt_backward(stack.text_adapter, bank.pooled, text, d_text).params, stack.text_offset());
  return out;
}

/// Value of the full objective only; used by finite-difference checks.
inline double sample_objective(const FeatureBundle& bundle, const AdapterStack& stack, const TextBank& bank,
                               const TrainConfig& cfg) {
  return sample_loss(bundle, stack, bank, cfg).total;
}

struct StepLog {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, global
  double total = 0.0;
  double cm = 0.0;
  double aacm = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double total = 0.0;
  double cm = 0.0;
  double aacm = 0.0;
};

struct TrainResult {
  AdapterStack stack;
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
};

inline void check_config_matches(const FeatureBundle& b, const TrainConfig& cfg, const std::string& source) {
  if (b.d_v() != cfg.d_v) {
    throw CompatError(source + ": d_v=" + std::to_string(b.d_v()) + " but config expects " + std::to_string(cfg.d_v));
  }
  for (auto l : cfg.layer_indices) {
    if (std::find(b.layer_indices.begin(), b.layer_indices.end(), l) == b.layer_indices.end()) {
      throw CompatError(source + ": no patch tokens for configured layer " + std::to_string(l));
    }
  }
  if (!b.mask_present) throw ValidationError(source + ": training bundle has no mask");
}

/// Trains a fresh stack on in-memory bundles. `names` labels bundles in error
/// messages and may be empty.
inline TrainResult train(const std::vector<FeatureBundle>& bundles, const TextBank& bank, const TrainConfig& cfg,
                         const std::vector<std::string>& names = {},
                         const std::function<void(const StepLog&)>& on_step = {}) {
  validate_config(cfg);
  if (bundles.empty()) throw ValidationError("train: training split is empty");
  if (bank.d_t != cfg.d_t) {
    throw CompatError("text bank d_t=" + std::to_string(bank.d_t) + " but config expects " + std::to_string(cfg.d_t));
  }
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    check_config_matches(bundles[i], cfg, i < names.size() ? names[i] : "bundle #" + std::to_string(i));
  }

  TrainResult result;
  result.stack = init_stack(cfg, cfg.seed);
  AdamState adam(result.stack.param_count());
  std::vector<double> params = result.stack.flat_params();
  Rng shuffler(cfg.seed ^ 0x5DEECE66DULL);

  std::vector<std::size_t> order(bundles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffler.shuffle(std::span<std::size_t>(order));
    EpochLog elog{epoch, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(batch.begin(), batch.end());  // reduce in manifest order

      std::vector<double> grad(params.size(), 0.0);
      StepLog slog{epoch, ++step, 0.0, 0.0, 0.0};
      for (std::size_t idx : batch) {
        const SampleLoss s = sample_loss(bundles[idx], result.stack, bank, cfg);
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += s.grad[k];
        slog.total += s.total;
        slog.cm += s.cm;
        slog.aacm += s.aacm;
      }
      const double n = static_cast<double>(batch.size());
      for (double& g : grad) g /= n;
      elog.total += slog.total;
      elog.cm += slog.cm;
      elog.aacm += slog.aacm;
      slog.total /= n;
      slog.cm /= n;
      slog.aacm /= n;

      adam_step(params, grad, adam, cfg);
      result.stack.set_flat_params(params);
      result.steps.push_back(slog);
      if (on_step) on_step(slog);
    }
    const double n = static_cast<double>(bundles.size());
    elog.total /= n;
    elog.cm /= n;
    elog.aacm /= n;
    result.epochs.push_back(elog);
  }
  return result;
}

/// Loads the manifest's train split and trains on it.
inline TrainResult train(const DatasetManifest& manifest, const TextBank& bank, const TrainConfig& cfg,
                         const std::function<void(const StepLog&)>& on_step = {}) {
  std::vector<FeatureBundle> bundles;
  std::vector<std::string> names;
  for (const auto& e : manifest.split(Split::Train)) {
    const auto path = manifest.resolve(e);
    bundles.push_back(read_bundle(path));
    names.push_back(path.string());
  }
  if (bundles.empty()) throw ValidationError("train: manifest has no train entries");
  return train(bundles, bank, cfg, names, on_step);
}

inline std::string format_loss_log(const std::vector<StepLog>& steps) {
  std::string out = "# epoch\tstep\ttotal\tcm\taacm\n";
  char line[160];
  for (const auto& s : steps) {
    std::snprintf(line, sizeof line, "%zu\t%zu\t%.17g\t%.17g\t%.17g\n", s.epoch, s.step, s.total, s.cm, s.aacm);
    out += line;
  }
  return out;
}

}  // namespace anomhead
