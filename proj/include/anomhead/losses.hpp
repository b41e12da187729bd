#pragma once

// Focal and Dice losses, the cross-modal objective over stages, the CLS-patch
// calibration objective and their weighted total. Every loss returns its
// value together with the exact gradient of that value.

#include <algorithm>
#include <cmath>
#include <vector>

#include "anomhead/config.hpp"
#include "anomhead/errors.hpp"
#include "anomhead/head.hpp"
#include "anomhead/numerics.hpp"

namespace anomhead {

inline constexpr double kProbClamp = 1e-7;

struct LossValue {
  double value = 0.0;
  ScoreGrid grad;  // d value / d input, same shape as the input
};

namespace detail {

inline void check_pair(const ScoreGrid& pred, const ScoreGrid& target, const char* who) {
  if (pred.height != target.height || pred.width != target.width || pred.size() != target.size()) {
    throw DimensionError(std::string(who) + ": prediction is " + std::to_string(pred.height) + "x" +
                         std::to_string(pred.width) + ", target is " + std::to_string(target.height) + "x" +
                         std::to_string(target.width));
  }
  if (pred.size() == 0) throw DimensionError(std::string(who) + ": empty input");
  for (double t : target.values) {
    if (t != 0.0 && t != 1.0) throw ValidationError(std::string(who) + ": target must be binary");
  }
  for (double p : pred.values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(who) + ": prediction outside [0,1]");
  }
}

}  // namespace detail

/// Mean over pixels of -a (1-p)^g log p on positives and -(1-a) p^g log(1-p)
/// on negatives, with p clamped to [1e-7, 1-1e-7].
inline LossValue focal_loss(const ScoreGrid& pred, const ScoreGrid& target, double gamma, double alpha) {
  if (!(gamma >= 0.0)) throw ConfigError("focal_loss: gamma must be >= 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("focal_loss: alpha must be in (0,1)");
  detail::check_pair(pred, target, "focal_loss");
  const double n = static_cast<double>(pred.size());
  LossValue out{0.0, ScoreGrid(pred.height, pred.width)};
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double raw = pred.values[i];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
    double loss = 0.0;
    double d = 0.0;
    if (target.values[i] == 1.0) {
      const double q = 1.0 - p;
      const double qg = std::pow(q, gamma);
      loss = -alpha * qg * std::log(p);
      const double dqg = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
      d = alpha * (dqg * std::log(p) - qg / p);
    } else {
      const double pg = std::pow(p, gamma);
      const double l1p = std::log1p(-p);
      loss = -(1.0 - alpha) * pg * l1p;
      const double dpg = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0);
      d = -(1.0 - alpha) * (dpg * l1p - pg / (1.0 - p));
    }
    acc += loss;
    out.grad.values[i] = clamped ? 0.0 : d / n;
  }
  out.value = acc / n;
  return out;
}

/// 1 - (2 sum p g + eps) / (sum p + sum g + eps)
inline LossValue dice_loss(const ScoreGrid& pred, const ScoreGrid& target, double eps) {
  if (!(eps > 0.0)) throw ConfigError("dice_loss: eps must be > 0");
  detail::check_pair(pred, target, "dice_loss");
  double inter = 0.0;
  double sp = 0.0;
  double sg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred.values[i] * target.values[i];
    sp += pred.values[i];
    sg += target.values[i];
  }
  const double num = 2.0 * inter + eps;
  const double den = sp + sg + eps;
  LossValue out{1.0 - num / den, ScoreGrid(pred.height, pred.width)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.grad.values[i] = -(2.0 * target.values[i] * den - num) / (den * den);
  }
  return out;
}

inline LossValue focal_dice(const ScoreGrid& pred, const ScoreGrid& target, const LossConfig& cfg) {
  LossValue f = focal_loss(pred, target, cfg.focal_gamma, cfg.focal_alpha);
  const LossValue d = dice_loss(pred, target, cfg.dice_eps);
  f.value += d.value;
  for (std::size_t i = 0; i < f.grad.size(); ++i) f.grad.values[i] += d.grad.values[i];
  return f;
}

struct StageLoss {
  double value = 0.0;
  std::vector<ScoreGrid> grad;  // per stage, w.r.t. its abnormal patch grid
};

/// Each stage's abnormal grid is upsampled to the mask resolution and scored
/// with focal + dice; the result is the mean over stages.
inline StageLoss loss_cm(const std::vector<ScoreGrid>& stage_grids, const ScoreGrid& mask, const LossConfig& cfg) {
  if (stage_grids.empty()) throw ValidationError("loss_cm: no stages");
  validate_loss_config(cfg);
  const double n = static_cast<double>(stage_grids.size());
  StageLoss out;
  for (const auto& g : stage_grids) {
    const ScoreGrid up = bilinear_resize(g, mask.height, mask.width);
    LossValue l = focal_dice(up, mask, cfg);
    out.value += l.value;
    for (double& v : l.grad.values) v /= n;
    out.grad.push_back(bilinear_resize_vjp(l.grad, g.height, g.width));
  }
  out.value /= n;
  return out;
}

inline StageLoss loss_cm(const std::vector<StageMap>& stages, const ScoreGrid& mask, const LossConfig& cfg) {
  std::vector<ScoreGrid> grids;
  grids.reserve(stages.size());
  for (const auto& s : stages) grids.push_back(s.grid);
  return loss_cm(grids, mask, cfg);
}

namespace detail {

inline ScoreGrid softmax_over_patches(const ScoreGrid& x) {
  ScoreGrid out(x.height, x.width);
  const double mx = *std::max_element(x.values.begin(), x.values.end());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.values[i] = std::exp(x.values[i] - mx);
    z += out.values[i];
  }
  for (double& v : out.values) v /= z;
  return out;
}

inline ScoreGrid softmax_over_patches_vjp(const ScoreGrid& out, const ScoreGrid& upstream) {
  double inner = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) inner += out.values[i] * upstream.values[i];
  ScoreGrid g(out.height, out.width);
  for (std::size_t i = 0; i < out.size(); ++i) g.values[i] = out.values[i] * (upstream.values[i] - inner);
  return g;
}

}  // namespace detail

/// Raw CLS-patch cosines -> probabilities (sigmoid per patch by default) ->
/// upsampled to mask resolution -> focal + dice. Gradient is w.r.t. the raw
/// cosine grid.
inline LossValue loss_aacm(const ScoreGrid& aacm_grid, const ScoreGrid& mask, const LossConfig& cfg) {
  validate_loss_config(cfg);
  const bool sig = cfg.aacm_activation == AacmActivation::Sigmoid;
  const ScoreGrid probs = sig ? sigmoid(aacm_grid) : detail::softmax_over_patches(aacm_grid);
  const ScoreGrid up = bilinear_resize(probs, mask.height, mask.width);
  const LossValue l = focal_dice(up, mask, cfg);
  const ScoreGrid dprobs = bilinear_resize_vjp(l.grad, probs.height, probs.width);
  return {l.value, sig ? sigmoid_vjp(probs, dprobs) : detail::softmax_over_patches_vjp(probs, dprobs)};
}

inline double total_loss(double cm, double aacm, const LossConfig& cfg) {
  return cfg.lambda_cm * cm + cfg.lambda_aacm * aacm;
}

}  // namespace anomhead
