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

// ViT image encoder with two forward modes.
//
// forward_standard: patchify, prepend the class token, add (interpolated)
// positional embeddings, run every block, project the class token.
//
// forward_dense: identical through block L-1; in block L the patch tokens skip
// attention mixing and take only the value path,
//     x' = x + out(v(ln_1(x))),   x_dense = x' + mlp(ln_2(x')),
// then get the same final norm and projection as the class token.
//
// Both capture head-averaged attention maps per layer with the class-token
// row and column removed.

#ifndef TAGCLIP_VISION_ENCODER_HPP_
#define TAGCLIP_VISION_ENCODER_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tagclip/bundle.hpp"
#include "tagclip/errors.hpp"
#include "tagclip/image_io.hpp"
#include "tagclip/numeric.hpp"
#include "tagclip/transformer.hpp"

namespace tagclip {

enum class ResolutionMode { kOriginal, kSquare };

// Normalized pixels plus the map back to source-image coordinates:
// source = origin + tensor_coord * scale.
struct ImageTensor {
  Grid2D pixels;  // height x width x 3, (v/255 - mean) / std
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double scale_x = 1.0;
  double scale_y = 1.0;

  std::size_t height() const { return pixels.height(); }
  std::size_t width() const { return pixels.width(); }
  std::size_t patch_count() const { return grid_h * grid_w; }
};

struct PatchMask {
  std::vector<bool> keep;

  static PatchMask all(std::size_t n) { return {std::vector<bool>(n, true)}; }
  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }
};

enum class MaskScope { kAllLayers, kLastLayer };

struct AttentionStack {
  std::vector<Matrix> layers;  // layer 1 first; each N_p x N_p

  std::size_t depth() const { return layers.size(); }
  std::size_t patches() const { return layers.empty() ? 0 : layers.front().rows(); }
};

struct DenseFeatureMap {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  Matrix features;  // N_p x D'
};

struct GlobalEmbedding {
  std::vector<float> vector;
};

// Optional instrumentation for tests and diagnostics.
struct ForwardTrace {
  std::vector<Matrix> hidden;          // token states after each block
  std::vector<Matrix> full_attention;  // head-averaged, class token included
  Matrix projected_tokens;             // ln_post + proj of every final token
};

struct StandardForwardOptions {
  const PatchMask* mask = nullptr;
  MaskScope mask_scope = MaskScope::kAllLayers;
  bool identity_last_attention = false;
  ForwardTrace* trace = nullptr;
};

// Normalizes a [0,255] grid whose sides are patch multiples.
inline ImageTensor make_image_tensor(const Grid2D& raw, const ModelConfig& cfg,
                                     double origin_x, double origin_y, double scale_x,
                                     double scale_y) {
  const std::size_t p = cfg.patch_size;
  if (raw.height() % p != 0 || raw.width() % p != 0 || raw.height() == 0 ||
      raw.width() == 0) {
    fail(ErrorKind::kShape, "image sides must be positive multiples of the patch size");
  }
  ImageTensor t;
  t.pixels = Grid2D(raw.height(), raw.width(), 3);
  for (std::size_t y = 0; y < raw.height(); ++y) {
    for (std::size_t x = 0; x < raw.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        t.pixels.at(y, x, c) =
            (raw.at(y, x, c) / 255.0f - cfg.pixel_mean[c]) / cfg.pixel_std[c];
      }
    }
  }
  t.grid_h = raw.height() / p;
  t.grid_w = raw.width() / p;
  t.origin_x = origin_x;
  t.origin_y = origin_y;
  t.scale_x = scale_x;
  t.scale_y = scale_y;
  return t;
}

// kOriginal center-crops each side down to a patch multiple; kSquare resizes
// bilinearly to the encoder's native resolution (native_grid * patch_size).
inline ImageTensor preprocess(const RgbImage& image, ResolutionMode mode,
                              const ModelConfig& cfg) {
  if (image.width == 0 || image.height == 0) fail(ErrorKind::kInput, "empty image");
  const std::size_t p = cfg.patch_size;
  if (mode == ResolutionMode::kSquare) {
    const std::size_t s = cfg.native_resolution();
    const Grid2D resized = bilinear_resize(to_grid(image), s, s);
    return make_image_tensor(resized, cfg, 0.0, 0.0,
                             static_cast<double>(image.width) / static_cast<double>(s),
                             static_cast<double>(image.height) / static_cast<double>(s));
  }
  const std::size_t w = image.width / p * p;
  const std::size_t h = image.height / p * p;
  if (w == 0 || h == 0) {
    fail(ErrorKind::kInput, "image " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) +
                                " is smaller than one patch");
  }
  const std::size_t x0 = (image.width - w) / 2;
  const std::size_t y0 = (image.height - h) / 2;
  Grid2D raw(h, w, 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) raw.at(y, x, c) = image.at(y0 + y, x0 + x, c);
    }
  }
  return make_image_tensor(raw, cfg, static_cast<double>(x0), static_cast<double>(y0), 1.0,
                           1.0);
}

// Keeps row 0 (class token) verbatim and bilinearly resizes the native
// grid of patch embeddings to grid_h x grid_w.
inline Matrix interpolate_pos_embed(const Matrix& pos_embed, std::size_t native_grid,
                                    std::size_t grid_h, std::size_t grid_w) {
  if (pos_embed.rows() != native_grid * native_grid + 1) {
    fail(ErrorKind::kShape, "positional embedding rows do not match native grid");
  }
  const std::size_t d = pos_embed.cols();
  if (grid_h == native_grid && grid_w == native_grid) return pos_embed;
  Grid2D grid(native_grid, native_grid, d);
  std::copy(pos_embed.data().begin() + static_cast<std::ptrdiff_t>(d),
            pos_embed.data().end(), grid.data().begin());
  const Grid2D resized = bilinear_resize(grid, grid_h, grid_w);
  Matrix out(grid_h * grid_w + 1, d);
  std::copy(pos_embed.row(0).begin(), pos_embed.row(0).end(), out.row(0).begin());
  std::copy(resized.data().begin(), resized.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(d));
  return out;
}

class VisionModel {
 public:
  explicit VisionModel(const WeightBundle& bundle) : config_(bundle.config()) {
    class_embedding_ = bundle.values("image.class_embedding");
    patch_embed_ = bundle.matrix("image.patch_embed.weight");
    pos_embed_ = bundle.matrix("image.pos_embed");
    ln_pre_ = NormWeights::load(bundle, "image.ln_pre");
    for (std::size_t i = 0; i < config_.image_layers; ++i) {
      blocks_.push_back(BlockWeights::load(bundle, "image.block." + std::to_string(i)));
    }
    ln_post_ = NormWeights::load(bundle, "image.ln_post");
    proj_ = bundle.matrix("image.proj");
  }

  const ModelConfig& config() const noexcept { return config_; }
  const Matrix& pos_embed() const noexcept { return pos_embed_; }

  Matrix interpolated_pos_embed(std::size_t grid_h, std::size_t grid_w) const {
    return interpolate_pos_embed(pos_embed_, config_.native_grid, grid_h, grid_w);
  }

  // (1 + N_p) x D token matrix: class token then patches in row-major order,
  // positional embeddings added, before ln_pre.
  Matrix embed(const ImageTensor& img) const {
    const std::size_t p = config_.patch_size;
    const std::size_t n = img.patch_count();
    Matrix patches(n, 3 * p * p);
    for (std::size_t gy = 0; gy < img.grid_h; ++gy) {
      for (std::size_t gx = 0; gx < img.grid_w; ++gx) {
        auto row = patches.row(gy * img.grid_w + gx);
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t ky = 0; ky < p; ++ky) {
            for (std::size_t kx = 0; kx < p; ++kx) {
              row[(c * p + ky) * p + kx] = img.pixels.at(gy * p + ky, gx * p + kx, c);
            }
          }
        }
      }
    }
    const Matrix patch_tokens = matmul(patches, patch_embed_);
    const Matrix pos = interpolated_pos_embed(img.grid_h, img.grid_w);
    Matrix tokens(n + 1, config_.image_width);
    std::copy(class_embedding_.begin(), class_embedding_.end(), tokens.row(0).begin());
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(patch_tokens.row(i).begin(), patch_tokens.row(i).end(),
                tokens.row(i + 1).begin());
    }
    add_inplace(tokens, pos);
    return tokens;
  }

  std::pair<GlobalEmbedding, AttentionStack> forward_standard(
      const ImageTensor& img, const StandardForwardOptions& opts = {}) const {
    return forward_standard_tokens(embed(img), opts);
  }

  std::pair<GlobalEmbedding, AttentionStack> forward_standard_tokens(
      Matrix tokens, const StandardForwardOptions& opts = {}) const {
    const std::size_t n = tokens.rows() - 1;
    std::vector<float> bias;
    if (opts.mask != nullptr) {
      if (opts.mask->keep.size() != n) fail(ErrorKind::kShape, "patch mask length mismatch");
      if (opts.mask->kept() == 0) {
        fail(ErrorKind::kPrecondition, "patch mask removes every patch");
      }
      bias.assign(n + 1, 0.0f);
      for (std::size_t i = 0; i < n; ++i) {
        if (!opts.mask->keep[i]) bias[i + 1] = -INFINITY;
      }
    }
    Matrix x = layer_norm(tokens, ln_pre_);
    AttentionStack stack;
    const std::size_t depth = blocks_.size();
    for (std::size_t l = 0; l < depth; ++l) {
      const bool last = l + 1 == depth;
      Matrix full;
      AttentionControl ctl;
      ctl.capture = &full;
      if (!bias.empty() && (last || opts.mask_scope == MaskScope::kAllLayers)) {
        ctl.key_bias = bias;
      }
      ctl.identity = last && opts.identity_last_attention;
      transformer_block(x, blocks_[l], config_.image_heads, config_.activation, ctl);
      stack.layers.push_back(drop_class_token(full));
      if (opts.trace != nullptr) {
        opts.trace->hidden.push_back(x);
        opts.trace->full_attention.push_back(std::move(full));
      }
    }
    const Matrix normed = layer_norm(x, ln_post_);
    if (opts.trace != nullptr) opts.trace->projected_tokens = matmul(normed, proj_);
    Matrix cls(1, normed.cols());
    std::copy(normed.row(0).begin(), normed.row(0).end(), cls.row(0).begin());
    const Matrix projected = matmul(cls, proj_);
    return {GlobalEmbedding{projected.values()}, std::move(stack)};
  }

  std::pair<DenseFeatureMap, AttentionStack> forward_dense(const ImageTensor& img,
                                                           ForwardTrace* trace = nullptr) const {
    auto [features, stack] = forward_dense_tokens(embed(img), trace);
    return {DenseFeatureMap{img.grid_h, img.grid_w, std::move(features)}, std::move(stack)};
  }

  std::pair<Matrix, AttentionStack> forward_dense_tokens(Matrix tokens,
                                                         ForwardTrace* trace = nullptr) const {
    const std::size_t n = tokens.rows() - 1;
    Matrix x = layer_norm(tokens, ln_pre_);
    AttentionStack stack;
    const std::size_t depth = blocks_.size();
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      Matrix full;
      AttentionControl ctl;
      ctl.capture = &full;
      transformer_block(x, blocks_[l], config_.image_heads, config_.activation, ctl);
      stack.layers.push_back(drop_class_token(full));
      if (trace != nullptr) {
        trace->hidden.push_back(x);
        trace->full_attention.push_back(std::move(full));
      }
    }
    const BlockWeights& last = blocks_.back();
    const Matrix normed_in = layer_norm(x, last.ln_1);
    {
      // Last-layer attention is captured for refinement but never mixes tokens.
      Matrix full;
      AttentionControl ctl;
      ctl.capture = &full;
      (void)multi_head_attention(normed_in, last, config_.image_heads, ctl);
      stack.layers.push_back(drop_class_token(full));
      if (trace != nullptr) trace->full_attention.push_back(std::move(full));
    }
    Matrix dense(n, x.cols());
    Matrix dense_in(n, x.cols());
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(x.row(i + 1).begin(), x.row(i + 1).end(), dense.row(i).begin());
      std::copy(normed_in.row(i + 1).begin(), normed_in.row(i + 1).end(),
                dense_in.row(i).begin());
    }
    add_inplace(dense, value_path(dense_in, last));
    add_inplace(dense, mlp(layer_norm(dense, last.ln_2), last, config_.activation));
    if (trace != nullptr) trace->hidden.push_back(dense);
    Matrix features = matmul(layer_norm(dense, ln_post_), proj_);
    if (trace != nullptr) trace->projected_tokens = features;
    return {std::move(features), std::move(stack)};
  }

 private:
  static Matrix drop_class_token(const Matrix& full) {
    const std::size_t n = full.rows() - 1;
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = full.row(i + 1).subspan(1);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  ModelConfig config_;
  std::vector<float> class_embedding_;
  Matrix patch_embed_;
  Matrix pos_embed_;
  NormWeights ln_pre_;
  std::vector<BlockWeights> blocks_;
  NormWeights ln_post_;
  Matrix proj_;
};

inline std::pair<GlobalEmbedding, AttentionStack> forward_standard(
    const ImageTensor& img, const VisionModel& model,
    const std::optional<PatchMask>& mask = std::nullopt,
    MaskScope scope = MaskScope::kAllLayers) {
  StandardForwardOptions opts;
  if (mask) opts.mask = &*mask;
  opts.mask_scope = scope;
  return model.forward_standard(img, opts);
}

inline std::pair<DenseFeatureMap, AttentionStack> forward_dense(const ImageTensor& img,
                                                                const VisionModel& model) {
  return model.forward_dense(img);
}

}  // namespace tagclip

#endif  // TAGCLIP_VISION_ENCODER_HPP_
