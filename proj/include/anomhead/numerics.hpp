#pragma once

// Dense 64-bit kernels used by the head, each paired with its
// vector-Jacobian product. Every reduction runs in a fixed sequential order
// so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "anomhead/errors.hpp"

namespace anomhead {

inline constexpr double kNormEps = 1e-12;

/// Row-major rows x cols matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Tensor2: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("Tensor2::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor2(r, c, std::move(data));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool operator==(const Tensor2&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Patch-grid or pixel-grid scalar field, row-major.
struct ScoreGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  ScoreGrid() = default;
  ScoreGrid(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
  ScoreGrid(std::size_t h, std::size_t w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
    if (values.size() != height * width) {
      throw DimensionError("ScoreGrid: " + std::to_string(values.size()) + " values for " +
                           std::to_string(height) + "x" + std::to_string(width));
    }
  }

  double& at(std::size_t i, std::size_t j) { return values[i * width + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
  std::size_t size() const noexcept { return values.size(); }

  bool operator==(const ScoreGrid&) const = default;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// linear

inline Tensor2 linear(const Tensor2& x, const Tensor2& weight, std::span<const double> bias) {
  detail::require(x.cols() == weight.rows(), "linear: x has " + std::to_string(x.cols()) +
                                                  " columns, weight has " + std::to_string(weight.rows()) + " rows");
  detail::require(bias.size() == weight.cols(), "linear: bias length does not match weight columns");
  Tensor2 out(x.rows(), weight.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < weight.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) s += x(i, k) * weight(k, j);
      out(i, j) = s + bias[j];
    }
  }
  return out;
}

struct LinearGrad {
  Tensor2 x;
  Tensor2 weight;
  std::vector<double> bias;
};

inline LinearGrad linear_vjp(const Tensor2& x, const Tensor2& weight, const Tensor2& upstream) {
  detail::require(x.cols() == weight.rows(), "linear_vjp: x/weight mismatch");
  detail::require(upstream.rows() == x.rows() && upstream.cols() == weight.cols(),
                  "linear_vjp: upstream shape mismatch");
  LinearGrad g{Tensor2(x.rows(), x.cols()), Tensor2(weight.rows(), weight.cols()),
               std::vector<double>(weight.cols(), 0.0)};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < x.cols(); ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < weight.cols(); ++j) s += upstream(i, j) * weight(k, j);
      g.x(i, k) = s;
    }
  }
  for (std::size_t k = 0; k < weight.rows(); ++k) {
    for (std::size_t j = 0; j < weight.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, k) * upstream(i, j);
      g.weight(k, j) = s;
    }
  }
  for (std::size_t j = 0; j < weight.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += upstream(i, j);
    g.bias[j] = s;
  }
  return g;
}

// ---------------------------------------------------------------------------
// leaky_relu

inline Tensor2 leaky_relu(const Tensor2& x, double slope) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.values()[i];
    out.values()[i] = v >= 0.0 ? v : slope * v;
  }
  return out;
}

// Derivative at exactly 0 is taken as 1.
inline Tensor2 leaky_relu_vjp(const Tensor2& x, double slope, const Tensor2& upstream) {
  detail::require(x.rows() == upstream.rows() && x.cols() == upstream.cols(), "leaky_relu_vjp: shape mismatch");
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.values()[i] = x.values()[i] >= 0.0 ? upstream.values()[i] : slope * upstream.values()[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax_over_states: row-wise softmax of scores / temperature.

inline Tensor2 softmax_over_states(const Tensor2& scores, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("softmax temperature must be > 0");
  Tensor2 out(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto in = scores.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp((in[j] - mx) / temperature);
      z += o[j];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

inline Tensor2 softmax_over_states_vjp(const Tensor2& probs, double temperature, const Tensor2& upstream) {
  detail::require(probs.rows() == upstream.rows() && probs.cols() == upstream.cols(),
                  "softmax_vjp: shape mismatch");
  Tensor2 out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const double inner = detail::dot(probs.row(i), upstream.row(i));
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      out(i, j) = probs(i, j) * (upstream(i, j) - inner) / temperature;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// sigmoid

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline ScoreGrid sigmoid(const ScoreGrid& x) {
  ScoreGrid out(x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = sigmoid(x.values[i]);
  return out;
}

// Takes the forward output, not the input.
inline ScoreGrid sigmoid_vjp(const ScoreGrid& out, const ScoreGrid& upstream) {
  detail::require(out.size() == upstream.size(), "sigmoid_vjp: shape mismatch");
  ScoreGrid g(out.height, out.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = out.values[i];
    g.values[i] = upstream.values[i] * s * (1.0 - s);
  }
  return g;
}

// ---------------------------------------------------------------------------
// l2_normalize_rows

inline Tensor2 l2_normalize_rows(const Tensor2& x, double eps = kNormEps) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double n = std::max(detail::norm(x.row(i)), eps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / n;
  }
  return out;
}

inline Tensor2 l2_normalize_rows_vjp(const Tensor2& x, const Tensor2& upstream, double eps = kNormEps) {
  detail::require(x.rows() == upstream.rows() && x.cols() == upstream.cols(), "l2_normalize_vjp: shape mismatch");
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double raw = detail::norm(x.row(i));
    if (raw > eps) {
      const double gy = detail::dot(upstream.row(i), x.row(i)) / raw;
      for (std::size_t j = 0; j < x.cols(); ++j) {
        out(i, j) = (upstream(i, j) - (x(i, j) / raw) * gy) / raw;
      }
    } else {
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = upstream(i, j) / eps;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// cosine_rows: out[i][j] = <a_i, b_j> / (max(|a_i|,eps) * max(|b_j|,eps))

inline Tensor2 cosine_rows(const Tensor2& a, const Tensor2& b, double eps = kNormEps) {
  detail::require(a.cols() == b.cols(), "cosine_rows: inner dimensions " + std::to_string(a.cols()) + " and " +
                                            std::to_string(b.cols()) + " differ");
  std::vector<double> nb(b.rows());
  for (std::size_t j = 0; j < b.rows(); ++j) nb[j] = std::max(detail::norm(b.row(j)), eps);
  Tensor2 out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double na = std::max(detail::norm(a.row(i)), eps);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out(i, j) = detail::dot(a.row(i), b.row(j)) / (na * nb[j]);
    }
  }
  return out;
}

struct CosineGrad {
  Tensor2 a;
  Tensor2 b;
};

inline CosineGrad cosine_rows_vjp(const Tensor2& a, const Tensor2& b, const Tensor2& upstream,
                                  double eps = kNormEps) {
  detail::require(a.cols() == b.cols(), "cosine_rows_vjp: inner dimension mismatch");
  detail::require(upstream.rows() == a.rows() && upstream.cols() == b.rows(), "cosine_rows_vjp: upstream shape");
  const std::size_t d = a.cols();
  std::vector<double> ra(a.rows()), rb(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) ra[i] = detail::norm(a.row(i));
  for (std::size_t j = 0; j < b.rows(); ++j) rb[j] = detail::norm(b.row(j));
  const Tensor2 cos = cosine_rows(a, b, eps);

  CosineGrad g{Tensor2(a.rows(), d), Tensor2(b.rows(), d)};
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double na = std::max(ra[i], eps);
    const bool a_live = ra[i] > eps;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double nb = std::max(rb[j], eps);
      const bool b_live = rb[j] > eps;
      const double gij = upstream(i, j);
      const double c = cos(i, j);
      const double scale = gij / (na * nb);
      for (std::size_t k = 0; k < d; ++k) {
        double da = scale * b(j, k);
        if (a_live) da -= gij * c * a(i, k) / (na * na);
        g.a(i, k) += da;
        double db = scale * a(i, k);
        if (b_live) db -= gij * c * b(j, k) / (nb * nb);
        g.b(j, k) += db;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// bilinear_resize, half-pixel centers, edges clamped.

namespace detail {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

inline std::vector<Tap> resize_taps(std::size_t src, std::size_t dst) {
  std::vector<Tap> taps(dst);
  const double max_coord = static_cast<double>(src - 1);
  for (std::size_t i = 0; i < dst; ++i) {
    double coord = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    coord = std::clamp(coord, 0.0, max_coord);
    const auto lo = static_cast<std::size_t>(std::floor(coord));
    taps[i] = {lo, std::min(lo + 1, src - 1), coord - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

inline ScoreGrid bilinear_resize(const ScoreGrid& src, std::size_t out_h, std::size_t out_w) {
  detail::require(src.height >= 1 && src.width >= 1 && out_h >= 1 && out_w >= 1,
                  "bilinear_resize: zero dimension");
  detail::require(src.values.size() == src.height * src.width, "bilinear_resize: malformed source grid");
  const auto ty = detail::resize_taps(src.height, out_h);
  const auto tx = detail::resize_taps(src.width, out_w);
  ScoreGrid out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto& y = ty[i];
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto& x = tx[j];
      const double top = (1.0 - x.frac) * src.at(y.lo, x.lo) + x.frac * src.at(y.lo, x.hi);
      const double bottom = (1.0 - x.frac) * src.at(y.hi, x.lo) + x.frac * src.at(y.hi, x.hi);
      out.at(i, j) = (1.0 - y.frac) * top + y.frac * bottom;
    }
  }
  return out;
}

/// Adjoint of bilinear_resize: scatters the upstream pixel gradient back onto
/// the src_h x src_w grid.
inline ScoreGrid bilinear_resize_vjp(const ScoreGrid& upstream, std::size_t src_h, std::size_t src_w) {
  detail::require(src_h >= 1 && src_w >= 1 && upstream.height >= 1 && upstream.width >= 1,
                  "bilinear_resize_vjp: zero dimension");
  const auto ty = detail::resize_taps(src_h, upstream.height);
  const auto tx = detail::resize_taps(src_w, upstream.width);
  ScoreGrid g(src_h, src_w);
  for (std::size_t i = 0; i < upstream.height; ++i) {
    const auto& y = ty[i];
    for (std::size_t j = 0; j < upstream.width; ++j) {
      const auto& x = tx[j];
      const double u = upstream.at(i, j);
      g.at(y.lo, x.lo) += (1.0 - y.frac) * (1.0 - x.frac) * u;
      g.at(y.lo, x.hi) += (1.0 - y.frac) * x.frac * u;
      g.at(y.hi, x.lo) += y.frac * (1.0 - x.frac) * u;
      g.at(y.hi, x.hi) += y.frac * x.frac * u;
    }
  }
  return g;
}

// Reshapes one column of an N x C tensor into a grid_h x grid_w grid.
inline ScoreGrid column_grid(const Tensor2& t, std::size_t col, std::size_t grid_h, std::size_t grid_w) {
  detail::require(t.rows() == grid_h * grid_w, "column_grid: row count does not match grid");
  detail::require(col < t.cols(), "column_grid: column out of range");
  ScoreGrid g(grid_h, grid_w);
  for (std::size_t i = 0; i < t.rows(); ++i) g.values[i] = t(i, col);
  return g;
}

}  // namespace anomhead
