/*
 * Copyright 2026 The tagclip-cpp Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Dense float32 primitives shared by the encoders and the tagging pipeline.
// Reductions (dot products, means, softmax denominators) accumulate in double.

#ifndef TAGCLIP_NUMERIC_HPP_
#define TAGCLIP_NUMERIC_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tagclip/errors.hpp"

namespace tagclip {

// Row-major rows x cols matrix of float32.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      fail(ErrorKind::kShape, "matrix data length " +
                                  std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) +
                                  "x" + std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// height x width x channels buffer, channel-innermost.
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(std::size_t height, std::size_t width, std::size_t channels,
         float fill = 0.0f)
      : height_(height),
        width_(width),
        channels_(channels),
        data_(height * width * channels, fill) {}
  Grid2D(std::size_t height, std::size_t width, std::size_t channels,
         std::vector<float> data)
      : height_(height),
        width_(width),
        channels_(channels),
        data_(std::move(data)) {
    if (data_.size() != height_ * width_ * channels_) {
      fail(ErrorKind::kShape, "grid data length does not match dimensions");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const Grid2D&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::kShape, "matmul: " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " * " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
  const std::size_t n = b.cols();
  Matrix out(a.rows(), n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const auto arow = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const float* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) acc[j] += aik * brow[j];
    }
    auto orow = out.row(i);
    for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
  }
  return out;
}

// a * b^T, i.e. out(i, j) = dot(a.row(i), b.row(j)).
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorKind::kShape, "matmul_transposed: inner dimensions differ");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const float* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const float* brow = b.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += static_cast<double>(arow[k]) * brow[k];
      }
      out(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

inline void softmax_inplace(std::span<float> row, float scale = 1.0f) {
  if (row.empty()) return;
  float max_v = -INFINITY;
  for (float v : row) max_v = std::max(max_v, v * scale);
  double sum = 0.0;
  for (float& v : row) {
    v = std::exp(v * scale - max_v);
    sum += v;
  }
  const double inv = 1.0 / sum;
  for (float& v : row) v = static_cast<float>(v * inv);
}

// Row-wise softmax of scale * m, stabilised by max subtraction. Entries of
// -inf contribute zero probability as long as one entry per row is finite.
inline Matrix softmax_rows(const Matrix& m, float scale = 1.0f) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r), scale);
  return out;
}

inline Matrix layer_norm(const Matrix& m, std::span<const float> gamma,
                         std::span<const float> beta, float eps = 1e-5f) {
  if (gamma.size() != m.cols() || beta.size() != m.cols()) {
    fail(ErrorKind::kShape, "layer_norm: gamma/beta length " +
                                std::to_string(gamma.size()) + "/" +
                                std::to_string(beta.size()) + " vs " +
                                std::to_string(m.cols()) + " columns");
  }
  Matrix out(m.rows(), m.cols());
  const double n = static_cast<double>(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) {
      o[c] = static_cast<float>((in[c] - mean) * inv_std * gamma[c] + beta[c]);
    }
  }
  return out;
}

inline float gelu(float x) {
  return static_cast<float>(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
}

// x * sigmoid(1.702 x), the activation some released checkpoints were trained
// with.
inline float quick_gelu(float x) {
  return static_cast<float>(x / (1.0 + std::exp(-1.702 * x)));
}

inline Matrix gelu(const Matrix& m) {
  Matrix out = m;
  for (float& v : out.data()) v = gelu(v);
  return out;
}

// Half-pixel (align_corners = false) bilinear resampling, edge-clamped.
inline Grid2D bilinear_resize(const Grid2D& g, std::size_t out_h,
                              std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || g.height() == 0 || g.width() == 0) {
    fail(ErrorKind::kShape, "bilinear_resize: zero-size grid");
  }
  if (out_h == g.height() && out_w == g.width()) return g;

  struct Tap {
    std::size_t lo, hi;
    float frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      auto lo = static_cast<std::size_t>(src);
      if (lo > in - 1) lo = in - 1;
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = {lo, hi, static_cast<float>(src - static_cast<double>(lo))};
    }
    return t;
  };
  const auto ty = taps(g.height(), out_h);
  const auto tx = taps(g.width(), out_w);
  Grid2D out(out_h, out_w, g.channels());
  for (std::size_t y = 0; y < out_h; ++y) {
    const float fy = ty[y].frac;
    for (std::size_t x = 0; x < out_w; ++x) {
      const float fx = tx[x].frac;
      for (std::size_t c = 0; c < g.channels(); ++c) {
        const float top = g.at(ty[y].lo, tx[x].lo, c) * (1.0f - fx) +
                          g.at(ty[y].lo, tx[x].hi, c) * fx;
        const float bottom = g.at(ty[y].hi, tx[x].lo, c) * (1.0f - fx) +
                             g.at(ty[y].hi, tx[x].hi, c) * fx;
        out.at(y, x, c) = top * (1.0f - fy) + bottom * fy;
      }
    }
  }
  return out;
}

// (x - min) / (max - min); all zeros when every entry is equal.
inline std::vector<float> minmax_normalize(std::span<const float> v) {
  if (v.empty()) fail(ErrorKind::kShape, "minmax_normalize: empty vector");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<float> out(v.size(), 0.0f);
  if (!(hi > lo)) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>((v[i] - lo) / range);
  }
  // Exact endpoints regardless of rounding in the division.
  out[static_cast<std::size_t>(lo_it - v.begin())] = 0.0f;
  out[static_cast<std::size_t>(hi_it - v.begin())] = 1.0f;
  return out;
}

// First index of the maximum (lowest index wins ties).
inline std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) -
                                  v.begin());
}

inline void add_row_bias(Matrix& m, std::span<const float> bias) {
  if (bias.size() != m.cols()) fail(ErrorKind::kShape, "bias length mismatch");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

inline void add_inplace(Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::kShape, "add: shape mismatch");
  }
  auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

inline double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

inline void l2_normalize_inplace(std::span<float> v) {
  const double n = l2_norm(v);
  if (n == 0.0) return;
  for (float& x : v) x = static_cast<float>(x / n);
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  }
  return out;
}

inline bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace tagclip

#endif  // TAGCLIP_NUMERIC_HPP_
