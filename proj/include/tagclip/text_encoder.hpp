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

#ifndef TAGCLIP_TEXT_ENCODER_HPP_
#define TAGCLIP_TEXT_ENCODER_HPP_

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tagclip/bundle.hpp"
#include "tagclip/errors.hpp"
#include "tagclip/numeric.hpp"
#include "tagclip/tokenizer.hpp"
#include "tagclip/transformer.hpp"

namespace tagclip {

// Causal text transformer; the embedding is the projected, normalized state
// at the end-of-text position.
class TextModel {
 public:
  explicit TextModel(const WeightBundle& bundle)
      : config_(bundle.config()), vocab_(bundle.vocab()) {
    token_embed_ = bundle.matrix("text.token_embed");
    pos_embed_ = bundle.matrix("text.pos_embed");
    for (std::size_t i = 0; i < config_.text_layers; ++i) {
      blocks_.push_back(BlockWeights::load(bundle, "text.block." + std::to_string(i)));
    }
    ln_final_ = NormWeights::load(bundle, "text.ln_final");
    proj_ = bundle.matrix("text.proj");
  }

  const ModelConfig& config() const noexcept { return config_; }
  const BpeVocab& vocab() const noexcept { return vocab_; }

  TokenSequence tokenize(std::string_view text) const {
    return tagclip::tokenize(text, vocab_, config_.context_length);
  }

  // Positions after the end-of-text token cannot influence it under the
  // causal mask, so only the prefix through eot_index is evaluated.
  std::vector<float> encode(const TokenSequence& tokens) const {
    if (tokens.ids.size() != config_.context_length ||
        tokens.eot_index >= tokens.ids.size()) {
      fail(ErrorKind::kShape, "token sequence does not match context length");
    }
    const std::size_t n = tokens.eot_index + 1;
    Matrix x(n, config_.text_width);
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = tokens.ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= token_embed_.rows()) {
        fail(ErrorKind::kLookup, "token id out of range: " + std::to_string(id));
      }
      const auto emb = token_embed_.row(static_cast<std::size_t>(id));
      const auto pos = pos_embed_.row(i);
      auto row = x.row(i);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = emb[c] + pos[c];
    }
    AttentionControl ctl;
    ctl.causal = true;
    for (const auto& block : blocks_) {
      transformer_block(x, block, config_.text_heads, config_.activation, ctl);
    }
    Matrix last(1, x.cols());
    std::copy(x.row(n - 1).begin(), x.row(n - 1).end(), last.row(0).begin());
    return matmul(layer_norm(last, ln_final_), proj_).values();
  }

 private:
  ModelConfig config_;
  BpeVocab vocab_;
  Matrix token_embed_;
  Matrix pos_embed_;
  std::vector<BlockWeights> blocks_;
  NormWeights ln_final_;
  Matrix proj_;
};

inline std::vector<float> encode_text(const TokenSequence& tokens, const TextModel& model) {
  return model.encode(tokens);
}

class PromptTemplate {
 public:
  static constexpr std::string_view kPlaceholder = "{}";

  explicit PromptTemplate(std::string pattern) : pattern_(std::move(pattern)) {
    const auto first = pattern_.find(kPlaceholder);
    if (first == std::string::npos ||
        pattern_.find(kPlaceholder, first + kPlaceholder.size()) != std::string::npos) {
      fail(ErrorKind::kConfig,
           "prompt template needs exactly one '{}' placeholder: " + pattern_);
    }
  }

  std::string fill(std::string_view name) const {
    std::string out = pattern_;
    out.replace(out.find(kPlaceholder), kPlaceholder.size(), name);
    return out;
  }

  const std::string& pattern() const noexcept { return pattern_; }
  bool operator==(const PromptTemplate&) const = default;

 private:
  std::string pattern_;
};

// The 80-prompt ensemble released with the contrastive model.
inline const std::vector<std::string>& default_template_patterns() {
  static const std::vector<std::string> patterns = {
      "a bad photo of a {}.",
      "a photo of many {}.",
      "a sculpture of a {}.",
      "a photo of the hard to see {}.",
      "a low resolution photo of the {}.",
      "a rendering of a {}.",
      "graffiti of a {}.",
      "a bad photo of the {}.",
      "a cropped photo of the {}.",
      "a tattoo of a {}.",
      "the embroidered {}.",
      "a photo of a hard to see {}.",
      "a bright photo of a {}.",
      "a photo of a clean {}.",
      "a photo of a dirty {}.",
      "a dark photo of the {}.",
      "a drawing of a {}.",
      "a photo of my {}.",
      "the plastic {}.",
      "a photo of the cool {}.",
      "a close-up photo of a {}.",
      "a black and white photo of the {}.",
      "a painting of the {}.",
      "a painting of a {}.",
      "a pixelated photo of the {}.",
      "a sculpture of the {}.",
      "a bright photo of the {}.",
      "a cropped photo of a {}.",
      "a plastic {}.",
      "a photo of the dirty {}.",
      "a jpeg corrupted photo of a {}.",
      "a blurry photo of the {}.",
      "a photo of the {}.",
      "a good photo of the {}.",
      "a rendering of the {}.",
      "a {} in a video game.",
      "a photo of one {}.",
      "a doodle of a {}.",
      "a close-up photo of the {}.",
      "a photo of a {}.",
      "the origami {}.",
      "the {} in a video game.",
      "a sketch of a {}.",
      "a doodle of the {}.",
      "a origami {}.",
      "a low resolution photo of a {}.",
      "the toy {}.",
      "a rendition of the {}.",
      "a photo of the clean {}.",
      "a photo of a large {}.",
      "a rendition of a {}.",
      "a photo of a nice {}.",
      "a photo of a weird {}.",
      "a blurry photo of a {}.",
      "a cartoon {}.",
      "art of a {}.",
      "a sketch of the {}.",
      "a embroidered {}.",
      "a pixelated photo of a {}.",
      "itap of the {}.",
      "a jpeg corrupted photo of the {}.",
      "a good photo of a {}.",
      "a plushie {}.",
      "a photo of the nice {}.",
      "a photo of the small {}.",
      "a photo of the weird {}.",
      "the cartoon {}.",
      "art of the {}.",
      "a drawing of the {}.",
      "a photo of the large {}.",
      "a black and white photo of a {}.",
      "the plushie {}.",
      "a dark photo of a {}.",
      "itap of a {}.",
      "graffiti of the {}.",
      "a toy {}.",
      "itap of my {}.",
      "a photo of a cool {}.",
      "a photo of a small {}.",
      "a tattoo of the {}.",
  };
  return patterns;
}

inline std::vector<PromptTemplate> make_templates(const std::vector<std::string>& patterns) {
  std::vector<PromptTemplate> out;
  out.reserve(patterns.size());
  for (const auto& p : patterns) out.emplace_back(p);
  return out;
}

// A class has an output name (used in tags and ground truth) and the text
// substituted into prompts, which defaults to the name.
struct ClassEntry {
  std::string name;
  std::string prompt;

  bool operator==(const ClassEntry&) const = default;
};

// Foreground classes first, then background classes. Background classes take
// part in every softmax but are never reported as tags.
struct ClassSet {
  std::vector<ClassEntry> foreground;
  std::vector<ClassEntry> background;
  std::vector<std::string> templates;  // empty: use the default ensemble

  std::size_t foreground_count() const { return foreground.size(); }
  std::size_t total() const { return foreground.size() + background.size(); }

  const ClassEntry& at(std::size_t i) const {
    return i < foreground.size() ? foreground[i] : background[i - foreground.size()];
  }

  std::vector<std::string> foreground_names() const {
    std::vector<std::string> out;
    for (const auto& c : foreground) out.push_back(c.name);
    return out;
  }

  void validate() const {
    if (foreground.empty()) fail(ErrorKind::kConfig, "class set has no foreground classes");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < total(); ++i) {
      const auto& c = at(i);
      if (c.name.empty() || c.prompt.empty()) fail(ErrorKind::kConfig, "empty class name");
      if (!seen.insert(c.name).second) {
        fail(ErrorKind::kConfig, "duplicate class name '" + c.name + "'");
      }
    }
  }

  static ClassSet from_json(const nlohmann::json& j) {
    auto entries = [](const nlohmann::json& arr, const char* what) {
      std::vector<ClassEntry> out;
      if (arr.is_null()) return out;
      if (!arr.is_array()) fail(ErrorKind::kConfig, std::string(what) + " must be an array");
      for (const auto& e : arr) {
        if (e.is_string()) {
          out.push_back({e.get<std::string>(), e.get<std::string>()});
        } else if (e.is_object() && e.contains("name")) {
          const auto name = e.at("name").get<std::string>();
          out.push_back({name, e.value("prompt", name)});
        } else {
          fail(ErrorKind::kConfig, std::string(what) + " entries must be strings or {name, prompt}");
        }
      }
      return out;
    };
    if (!j.is_object()) fail(ErrorKind::kConfig, "class set must be a JSON object");
    ClassSet cs;
    try {
      cs.foreground = entries(j.value("foreground", nlohmann::json()), "foreground");
      cs.background = entries(j.value("background", nlohmann::json()), "background");
      if (j.contains("templates")) {
        cs.templates = j.at("templates").get<std::vector<std::string>>();
        if (cs.templates.empty()) fail(ErrorKind::kConfig, "template list is empty");
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, std::string("class set: ") + e.what());
    }
    cs.validate();
    return cs;
  }

  static ClassSet load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::kIo, "cannot open class set " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

// D' x C_total, unit-norm columns in class-set order.
struct ClassifierMatrix {
  Matrix weights;

  std::size_t dim() const { return weights.rows(); }
  std::size_t classes() const { return weights.cols(); }
};

// Per class: encode every filled template, L2-normalize each embedding,
// average, renormalize. Prompts are encoded on `workers` threads; the
// reduction order is fixed so the result does not depend on scheduling.
inline ClassifierMatrix build_classifier(const ClassSet& classes,
                                         const std::vector<PromptTemplate>& templates,
                                         const TextModel& model, std::size_t workers = 1) {
  if (templates.empty()) fail(ErrorKind::kConfig, "at least one prompt template is required");
  const std::size_t c_total = classes.total();
  const std::size_t t_count = templates.size();
  const std::size_t dim = model.config().embed_dim;
  std::vector<std::vector<float>> embeddings(c_total * t_count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t job = next++; job < embeddings.size(); job = next++) {
      const auto& entry = classes.at(job / t_count);
      auto e = model.encode(model.tokenize(templates[job % t_count].fill(entry.prompt)));
      l2_normalize_inplace(e);
      embeddings[job] = std::move(e);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, embeddings.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  ClassifierMatrix t{Matrix(dim, c_total)};
  std::vector<double> mean(dim);
  for (std::size_t c = 0; c < c_total; ++c) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t k = 0; k < t_count; ++k) {
      const auto& e = embeddings[c * t_count + k];
      for (std::size_t d = 0; d < dim; ++d) mean[d] += e[d];
    }
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t d = 0; d < dim; ++d) {
      t.weights(d, c) = static_cast<float>(norm > 0.0 ? mean[d] / norm : 0.0);
    }
  }
  return t;
}

inline std::string classifier_cache_key(uint64_t bundle_hash, const ClassSet& classes,
                                        const std::vector<PromptTemplate>& templates) {
  nlohmann::json j;
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(bundle_hash));
  j["bundle"] = hex;
  for (std::size_t i = 0; i < classes.total(); ++i) {
    j["classes"].push_back({classes.at(i).name, classes.at(i).prompt,
                            i < classes.foreground_count() ? "fg" : "bg"});
  }
  for (const auto& t : templates) j["templates"].push_back(t.pattern());
  return j.dump();
}

// Loads the classifier from `cache_dir` when a file for this exact
// (bundle, classes, templates) key exists, otherwise builds and stores it.
inline ClassifierMatrix cached_classifier(const std::filesystem::path& cache_dir,
                                          uint64_t bundle_hash, const ClassSet& classes,
                                          const std::vector<PromptTemplate>& templates,
                                          const TextModel& model, std::size_t workers = 1) {
  const std::string key = classifier_cache_key(bundle_hash, classes, templates);
  char name[40];
  std::snprintf(name, sizeof(name), "classifier-%016llx.bin",
                static_cast<unsigned long long>(fnv1a64(key)));
  const auto path = cache_dir / name;
  if (std::filesystem::exists(path)) {
    const TensorFile file = TensorFile::read(path);
    const auto it = file.metadata().find("cache_key");
    if (it != file.metadata().end() && it->second == key) {
      const auto& rec = file.record("classifier");
      if (rec.shape == std::vector<std::size_t>{model.config().embed_dim, classes.total()}) {
        return {file.matrix("classifier")};
      }
    }
  }
  ClassifierMatrix t = build_classifier(classes, templates, model, workers);
  std::filesystem::create_directories(cache_dir);
  // Write under a temporary name, then rename into place.
  const auto tmp = cache_dir / (std::string(name) + ".tmp");
  TensorFile::write(tmp, {{"classifier", {t.dim(), t.classes()}, t.weights.values()}},
                    {{"cache_key", key}});
  std::filesystem::rename(tmp, path);
  return t;
}

}  // namespace tagclip

#endif  // TAGCLIP_TEXT_ENCODER_HPP_
