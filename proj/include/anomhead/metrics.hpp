#pragma once

// Pixel-level AUROC and maximum F1, pooled over all pixels of a split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anomhead/adapters.hpp"
#include "anomhead/config.hpp"
#include "anomhead/errors.hpp"
#include "anomhead/feature_io.hpp"
#include "anomhead/head.hpp"

namespace anomhead {

namespace detail {

inline void check_population(std::span<const double> scores, std::span<const std::uint8_t> labels, const char* who) {
  if (scores.size() != labels.size()) throw DimensionError(std::string(who) + ": scores and labels differ in length");
  for (double s : scores) {
    if (std::isnan(s)) throw ValidationError(std::string(who) + ": NaN score");
  }
  for (auto l : labels) {
    if (l > 1) throw ValidationError(std::string(who) + ": labels must be 0 or 1");
  }
}

// Indices ordered by (score, original index).
inline std::vector<std::size_t> ranked(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

}  // namespace detail

/// Probability that a random positive outranks a random negative, ties
/// counted as one half. Equals the trapezoidal ROC area.
inline double pixel_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_population(scores, labels, "pixel_auroc");
  const auto idx = detail::ranked(scores);
  std::uint64_t n_pos = 0;
  std::uint64_t n_neg = 0;
  std::uint64_t twice_correct = 0;  // 2 * (ordered pairs + ties / 2)
  for (std::size_t g = 0; g < idx.size();) {
    std::size_t e = g;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    while (e < idx.size() && scores[idx[e]] == scores[idx[g]]) {
      (labels[idx[e]] ? pos : neg) += 1;
      ++e;
    }
    twice_correct += 2 * pos * n_neg + pos * neg;
    n_pos += pos;
    n_neg += neg;
    g = e;
  }
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("pixel_auroc: undefined, labels contain a single class");
  }
  return (static_cast<double>(twice_correct) / 2.0) / static_cast<double>(n_pos * n_neg);
}

/// Best F1 over thresholds at the distinct observed scores, predicting
/// positive when score >= threshold.
inline double max_f1(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_population(scores, labels, "max_f1");
  const std::uint64_t total_pos = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) throw MetricError("max_f1: undefined, no positive labels");
  const auto idx = detail::ranked(scores);
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  double best = 0.0;
  for (std::size_t g = idx.size(); g > 0;) {
    std::size_t e = g;
    while (e > 0 && scores[idx[e - 1]] == scores[idx[g - 1]]) {
      (labels[idx[e - 1]] ? tp : fp) += 1;
      --e;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    if (precision + recall > 0.0) best = std::max(best, 2.0 * precision * recall / (precision + recall));
    g = e;
  }
  return best;
}

struct ImageEval {
  std::string name;
  std::size_t n_pixels = 0;
  std::optional<double> pixel_auroc;  // only when both classes are present
};

struct EvalReport {
  double pixel_auroc = 0.0;
  double max_f1 = 0.0;
  std::size_t n_images = 0;
  std::size_t n_pixels = 0;
  std::vector<ImageEval> per_image;
};

/// Pools every pixel of every (map, mask) pair into one population.
class PixelPool {
 public:
  void add(const std::string& name, const AnomalyMap& map, const FeatureBundle& bundle) {
    if (!bundle.mask_present) throw ValidationError(name + ": evaluation requires a ground-truth mask");
    if (map.height != bundle.image_h || map.width != bundle.image_w) {
      throw DimensionError(name + ": anomaly map does not match image size");
    }
    scores_.insert(scores_.end(), map.values.begin(), map.values.end());
    labels_.insert(labels_.end(), bundle.mask.begin(), bundle.mask.end());
    ImageEval ie{name, map.size(), std::nullopt};
    const bool has_pos = std::find(bundle.mask.begin(), bundle.mask.end(), 1) != bundle.mask.end();
    const bool has_neg = std::find(bundle.mask.begin(), bundle.mask.end(), 0) != bundle.mask.end();
    if (has_pos && has_neg) ie.pixel_auroc = anomhead::pixel_auroc(map.values, bundle.mask);
    per_image_.push_back(std::move(ie));
  }

  EvalReport report() const {
    if (per_image_.empty()) throw ValidationError("evaluate: test split is empty");
    EvalReport r;
    r.pixel_auroc = anomhead::pixel_auroc(scores_, labels_);
    r.max_f1 = anomhead::max_f1(scores_, labels_);
    r.n_images = per_image_.size();
    r.n_pixels = scores_.size();
    r.per_image = per_image_;
    return r;
  }

 private:
  std::vector<double> scores_;
  std::vector<std::uint8_t> labels_;
  std::vector<ImageEval> per_image_;
};

inline EvalReport evaluate(const std::vector<FeatureBundle>& bundles, const AdapterStack& stack, const TextBank& bank,
                           const TrainConfig& cfg, const std::vector<std::string>& names = {}) {
  PixelPool pool;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const std::string name = i < names.size() ? names[i] : "bundle #" + std::to_string(i);
    pool.add(name, infer(bundles[i], stack, bank, cfg).map, bundles[i]);
  }
  return pool.report();
}

inline EvalReport evaluate_baseline(const std::vector<FeatureBundle>& bundles,
                                    const std::vector<std::string>& names = {}) {
  PixelPool pool;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const std::string name = i < names.size() ? names[i] : "bundle #" + std::to_string(i);
    pool.add(name, baseline_map(bundles[i]), bundles[i]);
  }
  return pool.report();
}

struct LoadedSplit {
  std::vector<FeatureBundle> bundles;
  std::vector<std::string> names;
};

inline LoadedSplit load_split(const DatasetManifest& manifest, Split split) {
  LoadedSplit s;
  for (const auto& e : manifest.split(split)) {
    s.bundles.push_back(read_bundle(manifest.resolve(e)));
    s.names.push_back(e.path);
  }
  if (s.bundles.empty()) throw ValidationError(std::string("manifest has no ") + split_name(split) + " entries");
  return s;
}

inline EvalReport evaluate(const DatasetManifest& manifest, const AdapterStack& stack, const TextBank& bank,
                           const TrainConfig& cfg) {
  const LoadedSplit test = load_split(manifest, Split::Test);
  return evaluate(test.bundles, stack, bank, cfg, test.names);
}

inline std::string format_report_text(const EvalReport& r) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "pixel AUROC  %.4f\nmax F1       %.4f\nimages       %zu\npixels       %zu\n",
                r.pixel_auroc, r.max_f1, r.n_images, r.n_pixels);
  out += line;
  for (const auto& ie : r.per_image) {
    if (ie.pixel_auroc) {
      std::snprintf(line, sizeof line, "  %s\tAUROC %.4f\n", ie.name.c_str(), *ie.pixel_auroc);
    } else {
      std::snprintf(line, sizeof line, "  %s\tAUROC n/a\n", ie.name.c_str());
    }
    out += line;
  }
  return out;
}

inline std::string format_report_kv(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "pixel_auroc=%.17g\nmax_f1=%.17g\nn_images=%zu\nn_pixels=%zu\n", r.pixel_auroc,
                r.max_f1, r.n_images, r.n_pixels);
  return buf;
}

}  // namespace anomhead
