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

#ifndef TAGCLIP_TRANSFORMER_HPP_
#define TAGCLIP_TRANSFORMER_HPP_

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tagclip/bundle.hpp"
#include "tagclip/numeric.hpp"

namespace tagclip {

inline constexpr float kLayerNormEps = 1e-5f;

struct LinearWeights {
  Matrix weight;  // [in, out]
  std::vector<float> bias;

  static LinearWeights load(const WeightBundle& b, const std::string& prefix) {
    return {b.matrix(prefix + ".weight"), b.values(prefix + ".bias")};
  }
};

struct NormWeights {
  std::vector<float> gamma;
  std::vector<float> beta;

  static NormWeights load(const WeightBundle& b, const std::string& prefix) {
    return {b.values(prefix + ".weight"), b.values(prefix + ".bias")};
  }
};

inline Matrix linear(const Matrix& x, const LinearWeights& w) {
  Matrix y = matmul(x, w.weight);
  add_row_bias(y, w.bias);
  return y;
}

inline Matrix layer_norm(const Matrix& x, const NormWeights& n) {
  return layer_norm(x, n.gamma, n.beta, kLayerNormEps);
}

// Pre-norm residual block: x + attn(ln_1(x)), then + mlp(ln_2(.)).
struct BlockWeights {
  NormWeights ln_1;
  LinearWeights q, k, v, out;
  NormWeights ln_2;
  LinearWeights fc, proj;

  static BlockWeights load(const WeightBundle& b, const std::string& prefix) {
    return {NormWeights::load(b, prefix + ".ln_1"),
            LinearWeights::load(b, prefix + ".attn.q"),
            LinearWeights::load(b, prefix + ".attn.k"),
            LinearWeights::load(b, prefix + ".attn.v"),
            LinearWeights::load(b, prefix + ".attn.out"),
            NormWeights::load(b, prefix + ".ln_2"),
            LinearWeights::load(b, prefix + ".mlp.fc"),
            LinearWeights::load(b, prefix + ".mlp.proj")};
  }
};

struct AttentionControl {
  // Additive bias per key position (0 or -inf); empty means none.
  std::span<const float> key_bias;
  bool causal = false;
  // Replace the softmax weights by the identity matrix (every token attends
  // only to itself) while keeping the weighted-sum path.
  bool identity = false;
  // Receives the head-averaged attention weights when non-null.
  Matrix* capture = nullptr;
};

inline Matrix head_slice(const Matrix& m, std::size_t head, std::size_t head_dim) {
  Matrix out(m.rows(), head_dim);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r).subspan(head * head_dim, head_dim);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline Matrix multi_head_attention(const Matrix& x, const BlockWeights& w,
                                   std::size_t heads, const AttentionControl& ctl) {
  const std::size_t n = x.rows();
  const std::size_t width = x.cols();
  const std::size_t head_dim = width / heads;
  if (!ctl.key_bias.empty() && ctl.key_bias.size() != n) {
    fail(ErrorKind::kShape, "attention key bias length mismatch");
  }
  const Matrix q = linear(x, w.q);
  const Matrix k = linear(x, w.k);
  const Matrix v = linear(x, w.v);
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

  Matrix merged(n, width);
  if (ctl.capture != nullptr) *ctl.capture = Matrix(n, n);
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix weights;
    if (ctl.identity) {
      weights = Matrix::identity(n);
    } else {
      weights = matmul_transposed(head_slice(q, h, head_dim), head_slice(k, h, head_dim));
      for (std::size_t i = 0; i < n; ++i) {
        auto row = weights.row(i);
        for (std::size_t j = 0; j < n; ++j) {
          row[j] *= scale;
          if (!ctl.key_bias.empty()) row[j] += ctl.key_bias[j];
          if (ctl.causal && j > i) row[j] = -INFINITY;
        }
        softmax_inplace(row);
      }
    }
    if (ctl.capture != nullptr) {
      auto cap = ctl.capture->data();
      const auto src = weights.data();
      for (std::size_t i = 0; i < cap.size(); ++i) {
        cap[i] += src[i] / static_cast<float>(heads);
      }
    }
    const Matrix mixed = matmul(weights, head_slice(v, h, head_dim));
    for (std::size_t r = 0; r < n; ++r) {
      const auto src = mixed.row(r);
      std::copy(src.begin(), src.end(), merged.row(r).begin() + h * head_dim);
    }
  }
  return linear(merged, w.out);
}

// out(v(x)): what attention reduces to when every token attends only to
// itself.
inline Matrix value_path(const Matrix& x, const BlockWeights& w) {
  return linear(linear(x, w.v), w.out);
}

inline Matrix mlp(const Matrix& x, const BlockWeights& w, Activation act) {
  Matrix hidden = linear(x, w.fc);
  for (float& v : hidden.data()) v = act == Activation::kGelu ? gelu(v) : quick_gelu(v);
  return linear(hidden, w.proj);
}

inline void transformer_block(Matrix& x, const BlockWeights& w, std::size_t heads,
                              Activation act, const AttentionControl& ctl) {
  add_inplace(x, multi_head_attention(layer_norm(x, w.ln_1), w, heads, ctl));
  add_inplace(x, mlp(layer_norm(x, w.ln_2), w, act));
}

}  // namespace tagclip

#endif  // TAGCLIP_TRANSFORMER_HPP_
