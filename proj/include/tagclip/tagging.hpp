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

// Local-to-global multi-label tagging.
//
//   1. Patch classification: softmax over all classes of the temperature-
//      scaled cosine similarity between each dense patch feature and the
//      text classifier.
//   2. Dual-masking refinement: attention entries survive only if they beat
//      their layer mean in more than K layers (vote mask); the masked maps
//      of the selected layers propagate scores once to find, per class, the
//      patches at or above the class mean (class mask), and once more with
//      propagation restricted to those source patches.
//   3. Class-wise reidentification: for each candidate class, crop the box
//      around its strongest patches, classify the crop through the class
//      token with the other patches masked out of attention, and blend that
//      global score with the local (max-over-patches) score.
//   4. Tags: min-max normalize the foreground scores, threshold at 0.5; the
//      top class is always tagged.
//
// Layer indices are 1-based; ties resolve to the lowest index.

#ifndef TAGCLIP_TAGGING_HPP_
#define TAGCLIP_TAGGING_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tagclip/errors.hpp"
#include "tagclip/image_io.hpp"
#include "tagclip/numeric.hpp"
#include "tagclip/text_encoder.hpp"
#include "tagclip/vision_encoder.hpp"

namespace tagclip {

// N_p x C_total patch-by-class scores.
using ScoreMap = Matrix;

struct VoteMask {
  std::size_t size = 0;
  std::size_t threshold = 0;
  std::vector<std::size_t> votes;  // size x size
  std::vector<bool> keep;          // votes > threshold

  bool operator()(std::size_t i, std::size_t j) const { return keep[i * size + j]; }
};

// Per patch and class: whether the patch is a confident source for the class.
struct ClassMask {
  std::size_t patches = 0;
  std::size_t classes = 0;
  std::vector<bool> keep;  // patches x classes

  bool operator()(std::size_t i, std::size_t c) const { return keep[i * classes + c]; }
};

struct RefineConfig {
  std::vector<std::size_t> layers;  // 1-based
  std::size_t vote_threshold = 0;
  std::size_t iterations = 1;
  // Turning both masks off gives plain attention-averaged propagation.
  bool vote_masking = true;
  bool class_masking = true;

  void validate(std::size_t depth) const {
    if (layers.empty()) fail(ErrorKind::kConfig, "refinement layer set is empty");
    for (auto l : layers) {
      if (l < 1 || l > depth) {
        fail(ErrorKind::kConfig, "refinement layer " + std::to_string(l) +
                                     " outside [1, " + std::to_string(depth) + "]");
      }
    }
    if (vote_threshold > depth) {
      fail(ErrorKind::kConfig, "vote threshold exceeds layer count");
    }
    if (iterations < 1) fail(ErrorKind::kConfig, "refinement iterations must be >= 1");
  }
};

// The four layers before the last, clipped to the encoder depth.
inline std::vector<std::size_t> default_refine_layers(std::size_t depth) {
  std::vector<std::size_t> out;
  if (depth == 1) return {1};
  for (std::size_t l = depth >= 5 ? depth - 4 : 1; l + 1 <= depth; ++l) out.push_back(l);
  return out;
}

inline std::size_t default_vote_threshold(std::size_t depth) { return (depth + 1) / 2; }

// Cosine similarity of each patch feature with each classifier column,
// scaled by `temperature`, softmax over classes.
inline ScoreMap classify_patches(const Matrix& features, const ClassifierMatrix& t,
                                 float temperature) {
  if (features.cols() != t.dim()) {
    fail(ErrorKind::kShape, "feature dim " + std::to_string(features.cols()) +
                                " != classifier dim " + std::to_string(t.dim()));
  }
  Matrix normed = features;
  for (std::size_t r = 0; r < normed.rows(); ++r) l2_normalize_inplace(normed.row(r));
  return softmax_rows(matmul(normed, t.weights), temperature);
}

inline VoteMask vote_mask(const AttentionStack& stack, std::size_t threshold) {
  if (stack.depth() == 0) fail(ErrorKind::kPrecondition, "empty attention stack");
  const std::size_t n = stack.patches();
  VoteMask m{n, threshold, std::vector<std::size_t>(n * n, 0), {}};
  for (const auto& layer : stack.layers) {
    double mean = 0.0;
    for (float v : layer.data()) mean += v;
    mean /= static_cast<double>(layer.size());
    const auto d = layer.data();
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d[k] > mean) ++m.votes[k];
    }
  }
  m.keep.resize(n * n);
  for (std::size_t k = 0; k < n * n; ++k) m.keep[k] = m.votes[k] > threshold;
  return m;
}

struct DmarResult {
  ScoreMap refined;
  ScoreMap first_pass;  // scores after the vote-masked propagation only
  ClassMask class_mask;
  VoteMask vote;
};

inline DmarResult refine_dmar(const ScoreMap& scores, const AttentionStack& stack,
                              const RefineConfig& cfg) {
  cfg.validate(stack.depth());
  const std::size_t n = stack.patches();
  if (scores.rows() != n) {
    fail(ErrorKind::kShape, "score map has " + std::to_string(scores.rows()) +
                                " patches, attention has " + std::to_string(n));
  }
  DmarResult out;
  out.vote = vote_mask(stack, cfg.vote_threshold);
  if (!cfg.vote_masking) std::fill(out.vote.keep.begin(), out.vote.keep.end(), true);

  // Mean over the selected layers of the vote-masked attention.
  Matrix affinity(n, n);
  {
    std::vector<double> acc(n * n, 0.0);
    for (auto l : cfg.layers) {
      const auto a = stack.layers[l - 1].data();
      for (std::size_t k = 0; k < n * n; ++k) {
        if (out.vote.keep[k]) acc[k] += a[k];
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.layers.size());
    auto d = affinity.data();
    for (std::size_t k = 0; k < n * n; ++k) d[k] = static_cast<float>(acc[k] * inv);
  }

  const std::size_t c_total = scores.cols();
  ScoreMap current = scores;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    out.first_pass = matmul(affinity, current);
    out.class_mask = ClassMask{n, c_total, std::vector<bool>(n * c_total)};
    ScoreMap gated(n, c_total);
    for (std::size_t c = 0; c < c_total; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += out.first_pass(i, c);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const bool keep = !cfg.class_masking || out.first_pass(i, c) >= mean;
        out.class_mask.keep[i * c_total + c] = keep;
        gated(i, c) = keep ? current(i, c) : 0.0f;
      }
    }
    current = matmul(affinity, gated);
  }
  out.refined = std::move(current);
  return out;
}

inline std::vector<float> local_scores(const ScoreMap& scores) {
  if (scores.rows() == 0) fail(ErrorKind::kPrecondition, "empty score map");
  std::vector<float> out(scores.row(0).begin(), scores.row(0).end());
  for (std::size_t i = 1; i < scores.rows(); ++i) {
    const auto row = scores.row(i);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = std::max(out[c], row[c]);
  }
  return out;
}

// Inclusive patch-coordinate rectangle.
struct PatchBox {
  std::size_t row_begin = 0;
  std::size_t row_end = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;

  std::size_t rows() const { return row_end - row_begin + 1; }
  std::size_t cols() const { return col_end - col_begin + 1; }
  bool operator==(const PatchBox&) const = default;
};

struct ClassRegion {
  PatchMask mask;
  PatchBox box;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

// Patches whose min-max normalized score for `cls` is >= mu2, and their
// bounding box. A constant column selects only its first patch.
inline ClassRegion class_region(const ScoreMap& scores, std::size_t cls, std::size_t grid_h,
                                std::size_t grid_w, float mu2) {
  if (cls >= scores.cols()) fail(ErrorKind::kLookup, "class index out of range");
  if (grid_h * grid_w != scores.rows()) fail(ErrorKind::kShape, "grid does not match score map");
  std::vector<float> column(scores.rows());
  for (std::size_t i = 0; i < column.size(); ++i) column[i] = scores(i, cls);
  ClassRegion region;
  region.grid_h = grid_h;
  region.grid_w = grid_w;
  region.mask.keep.assign(column.size(), false);
  const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
  if (!(*hi > *lo)) {
    region.mask.keep[argmax(column)] = true;
  } else {
    const auto normed = minmax_normalize(column);
    for (std::size_t i = 0; i < normed.size(); ++i) region.mask.keep[i] = normed[i] >= mu2;
  }
  bool first = true;
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (!region.mask.keep[i]) continue;
    const std::size_t r = i / grid_w;
    const std::size_t c = i % grid_w;
    if (first) {
      region.box = {r, r, c, c};
      first = false;
    } else {
      region.box.row_begin = std::min(region.box.row_begin, r);
      region.box.row_end = std::max(region.box.row_end, r);
      region.box.col_begin = std::min(region.box.col_begin, c);
      region.box.col_end = std::max(region.box.col_end, c);
    }
  }
  return region;
}

// Class-token classification of a whole preprocessed image: softmax over all
// classes of the scaled cosine similarity.
inline std::vector<float> classify_global(const GlobalEmbedding& embedding,
                                          const ClassifierMatrix& t, float temperature) {
  Matrix e(1, embedding.vector.size(), embedding.vector);
  return classify_patches(e, t, temperature).values();
}

// Crops the source image to the region's box, resizes the crop to the
// encoder's native resolution, resamples the region mask onto the crop grid
// (nearest neighbour), and classifies the class token with masked-out
// patches excluded from attention. Returns a distribution over all classes.
inline std::vector<float> cwr_global(const RgbImage& image, const ImageTensor& tensor,
                                     const ClassRegion& region, const VisionModel& model,
                                     const ClassifierMatrix& t, float temperature,
                                     MaskScope scope = MaskScope::kAllLayers) {
  const auto& cfg = model.config();
  const double p = static_cast<double>(cfg.patch_size);
  const auto& box = region.box;
  auto clamp_to = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  const std::size_t x0 = clamp_to(
      std::floor(tensor.origin_x + static_cast<double>(box.col_begin) * p * tensor.scale_x),
      image.width);
  const std::size_t x1 = clamp_to(
      std::ceil(tensor.origin_x + static_cast<double>(box.col_end + 1) * p * tensor.scale_x),
      image.width);
  const std::size_t y0 = clamp_to(
      std::floor(tensor.origin_y + static_cast<double>(box.row_begin) * p * tensor.scale_y),
      image.height);
  const std::size_t y1 = clamp_to(
      std::ceil(tensor.origin_y + static_cast<double>(box.row_end + 1) * p * tensor.scale_y),
      image.height);
  if (x1 <= x0 || y1 <= y0) fail(ErrorKind::kPrecondition, "class region crop is empty");

  Grid2D crop(y1 - y0, x1 - x0, 3);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) {
      for (std::size_t c = 0; c < 3; ++c) crop.at(y - y0, x - x0, c) = image.at(y, x, c);
    }
  }
  const std::size_t s = cfg.native_resolution();
  const ImageTensor crop_tensor = make_image_tensor(bilinear_resize(crop, s, s), cfg, 0, 0, 1, 1);

  const std::size_t g = cfg.native_grid;
  PatchMask mask{std::vector<bool>(g * g, false)};
  for (std::size_t gy = 0; gy < g; ++gy) {
    const std::size_t r = box.row_begin + (2 * gy + 1) * box.rows() / (2 * g);
    for (std::size_t gx = 0; gx < g; ++gx) {
      const std::size_t c = box.col_begin + (2 * gx + 1) * box.cols() / (2 * g);
      mask.keep[gy * g + gx] = region.mask.keep[r * region.grid_w + c];
    }
  }
  if (mask.kept() == 0) {
    // Sparse regions wider than the crop grid can be missed by point
    // sampling; fall back to marking the cell each kept patch lands in.
    for (std::size_t i = 0; i < region.mask.keep.size(); ++i) {
      if (!region.mask.keep[i]) continue;
      const std::size_t r = i / region.grid_w - box.row_begin;
      const std::size_t c = i % region.grid_w - box.col_begin;
      mask.keep[(r * g / box.rows()) * g + c * g / box.cols()] = true;
    }
  }
  StandardForwardOptions opts;
  opts.mask = &mask;
  opts.mask_scope = scope;
  const auto [embedding, stack] = model.forward_standard(crop_tensor, opts);
  return classify_global(embedding, t, temperature);
}

inline float fuse(float local, float global, float lambda) {
  if (!(lambda >= 0.0f && lambda <= 1.0f)) {
    fail(ErrorKind::kConfig, "fusion coefficient must lie in [0, 1]");
  }
  if (lambda == 1.0f) return local;
  if (lambda == 0.0f) return global;
  return lambda * local + (1.0f - lambda) * global;
}

struct TagDecision {
  std::vector<float> normalized;
  std::vector<bool> positive;
};

inline TagDecision predict_tags(std::span<const float> scores, float threshold = 0.5f) {
  if (scores.empty()) fail(ErrorKind::kPrecondition, "no foreground classes to tag");
  TagDecision d;
  d.normalized = minmax_normalize(scores);
  d.positive.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) d.positive[i] = d.normalized[i] >= threshold;
  d.positive[argmax(scores)] = true;
  return d;
}

struct TagConfig {
  std::vector<std::size_t> refine_layers;      // empty: default_refine_layers
  std::optional<std::size_t> vote_threshold;   // empty: default_vote_threshold
  std::size_t refine_iterations = 1;
  bool vote_masking = true;
  bool class_masking = true;
  float lambda = 0.5f;
  float mu1 = 0.5f;
  float mu2 = 0.5f;
  float threshold = 0.5f;
  std::optional<float> temperature;  // empty: the bundle's logit scale
  bool dmar = true;
  bool cwr = true;
  MaskScope mask_scope = MaskScope::kAllLayers;
  ResolutionMode resolution = ResolutionMode::kOriginal;

  RefineConfig refine_config(std::size_t depth) const {
    RefineConfig r;
    r.layers = refine_layers.empty() ? default_refine_layers(depth) : refine_layers;
    r.vote_threshold = vote_threshold.value_or(default_vote_threshold(depth));
    r.iterations = refine_iterations;
    r.vote_masking = vote_masking;
    r.class_masking = class_masking;
    return r;
  }

  void validate(std::size_t depth) const {
    auto unit = [](float v, const char* what) {
      if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorKind::kConfig, std::string(what) + " must lie in [0, 1]");
    };
    unit(lambda, "lambda");
    unit(mu1, "mu1");
    unit(mu2, "mu2");
    unit(threshold, "threshold");
    if (temperature && !(*temperature > 0.0f)) fail(ErrorKind::kConfig, "temperature must be positive");
    if (dmar) refine_config(depth).validate(depth);
  }

  // All fields optional; unknown keys are rejected.
  static TagConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorKind::kConfig, "tag config must be a JSON object");
    TagConfig c;
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        const auto& v = it.value();
        if (k == "psi") {
          c.refine_layers = v.get<std::vector<std::size_t>>();
        } else if (k == "k_votes") {
          c.vote_threshold = v.get<std::size_t>();
        } else if (k == "iterations") {
          c.refine_iterations = v.get<std::size_t>();
        } else if (k == "vote_mask") {
          c.vote_masking = v.get<bool>();
        } else if (k == "class_mask") {
          c.class_masking = v.get<bool>();
        } else if (k == "lambda") {
          c.lambda = v.get<float>();
        } else if (k == "mu1") {
          c.mu1 = v.get<float>();
        } else if (k == "mu2") {
          c.mu2 = v.get<float>();
        } else if (k == "threshold") {
          c.threshold = v.get<float>();
        } else if (k == "temperature") {
          if (!v.is_null()) c.temperature = v.get<float>();
        } else if (k == "dmar") {
          c.dmar = v.get<bool>();
        } else if (k == "cwr") {
          c.cwr = v.get<bool>();
        } else if (k == "mask_scope") {
          const auto s = v.get<std::string>();
          if (s == "all") {
            c.mask_scope = MaskScope::kAllLayers;
          } else if (s == "last") {
            c.mask_scope = MaskScope::kLastLayer;
          } else {
            fail(ErrorKind::kConfig, "mask_scope must be 'all' or 'last'");
          }
        } else if (k == "resolution") {
          const auto s = v.get<std::string>();
          if (s == "original") {
            c.resolution = ResolutionMode::kOriginal;
          } else if (s == "224" || s == "square") {
            c.resolution = ResolutionMode::kSquare;
          } else {
            fail(ErrorKind::kConfig, "resolution must be 'original' or '224'");
          }
        } else {
          fail(ErrorKind::kConfig, "unknown tag config key '" + k + "'");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, std::string("tag config: ") + e.what());
    }
    return c;
  }
};

struct ClassTag {
  float local = 0.0f;
  std::optional<float> global;
  float final_score = 0.0f;
  float normalized = 0.0f;
  bool positive = false;
};

struct TagResult {
  std::vector<ClassTag> classes;  // foreground order
  float lambda = 0.5f;
  float mu1 = 0.5f;
  float mu2 = 0.5f;

  std::vector<float> final_scores() const {
    std::vector<float> out;
    for (const auto& c : classes) out.push_back(c.final_score);
    return out;
  }
  std::vector<std::size_t> positives() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i].positive) out.push_back(i);
    }
    return out;
  }
};

// Intermediate products of one tag_image run, for inspection.
struct TagTrace {
  ScoreMap coarse;
  ScoreMap refined;
  std::vector<std::size_t> candidates;
};

inline TagResult tag_image(const RgbImage& image, const VisionModel& model,
                           const ClassifierMatrix& t, const ClassSet& classes,
                           const TagConfig& cfg, float default_temperature,
                           TagTrace* trace = nullptr) {
  const std::size_t depth = model.config().image_layers;
  cfg.validate(depth);
  if (t.classes() != classes.total()) {
    fail(ErrorKind::kShape, "classifier has " + std::to_string(t.classes()) +
                                " columns, class set has " + std::to_string(classes.total()));
  }
  const float temperature = cfg.temperature.value_or(default_temperature);
  const std::size_t fg = classes.foreground_count();

  const ImageTensor tensor = preprocess(image, cfg.resolution, model.config());
  const auto [dense, stack] = model.forward_dense(tensor);
  const ScoreMap coarse = classify_patches(dense.features, t, temperature);
  ScoreMap refined =
      cfg.dmar ? refine_dmar(coarse, stack, cfg.refine_config(depth)).refined : coarse;
  const auto local = local_scores(refined);

  const std::vector<float> fg_local(local.begin(), local.begin() + static_cast<std::ptrdiff_t>(fg));
  const auto local_norm = minmax_normalize(fg_local);
  std::vector<std::size_t> candidates;
  const std::size_t top = argmax(fg_local);
  for (std::size_t c = 0; c < fg; ++c) {
    if (local_norm[c] >= cfg.mu1 || c == top) candidates.push_back(c);
  }

  TagResult result;
  result.lambda = cfg.lambda;
  result.mu1 = cfg.mu1;
  result.mu2 = cfg.mu2;
  result.classes.resize(fg);
  for (std::size_t c = 0; c < fg; ++c) {
    result.classes[c].local = fg_local[c];
    result.classes[c].final_score = fg_local[c];
  }
  if (cfg.cwr) {
    for (auto c : candidates) {
      const auto region = class_region(refined, c, dense.grid_h, dense.grid_w, cfg.mu2);
      const auto global =
          cwr_global(image, tensor, region, model, t, temperature, cfg.mask_scope);
      result.classes[c].global = global[c];
      result.classes[c].final_score = fuse(fg_local[c], global[c], cfg.lambda);
    }
  }
  const auto decision = predict_tags(result.final_scores(), cfg.threshold);
  for (std::size_t c = 0; c < fg; ++c) {
    result.classes[c].normalized = decision.normalized[c];
    result.classes[c].positive = decision.positive[c];
  }
  if (trace != nullptr) {
    trace->coarse = coarse;
    trace->refined = std::move(refined);
    trace->candidates = std::move(candidates);
  }
  return result;
}

}  // namespace tagclip

#endif  // TAGCLIP_TAGGING_HPP_
