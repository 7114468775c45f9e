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

// Tensor container and weight bundle.
//
// File layout:
//   u64 little-endian header length n
//   n bytes of UTF-8 JSON: { name: {"dtype": "F32", "shape": [...],
//                                   "data_offsets": [begin, end]}, ...,
//                            "__metadata__": { key: string, ... } }
//   data region; offsets are relative to its first byte.
//
// Tensor naming (linear weights are stored [in, out] so y = x * W + b):
//   image.class_embedding [D]          image.patch_embed.weight [3*p*p, D]
//   image.pos_embed [g*g + 1, D]       image.ln_pre.{weight,bias} [D]
//   image.block.{i}.<block>            image.ln_post.{weight,bias} [D]
//   image.proj [D, D']
//   text.token_embed [V, W]            text.pos_embed [ctx, W]
//   text.block.{i}.<block>             text.ln_final.{weight,bias} [W]
//   text.proj [W, D']                  logit_scale [1]
// where <block> is ln_1.{weight,bias}, attn.{q,k,v,out}.{weight,bias},
// ln_2.{weight,bias}, mlp.fc.{weight,bias}, mlp.proj.{weight,bias}.
// Patch weights flatten each patch channel-major then row-major (c, y, x).
// logit_scale holds the multiplicative softmax temperature (not its log).

#ifndef TAGCLIP_BUNDLE_HPP_
#define TAGCLIP_BUNDLE_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tagclip/errors.hpp"
#include "tagclip/numeric.hpp"
#include "tagclip/tokenizer.hpp"

namespace tagclip {

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are decoded with memcpy on little-endian hosts");

inline constexpr std::string_view kMetadataKey = "__metadata__";

struct TensorRecord {
  std::string name;
  std::vector<std::size_t> shape;
  std::string dtype = "F32";
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

using Metadata = std::map<std::string, std::string>;

inline uint64_t fnv1a64(std::span<const std::byte> bytes,
                        uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::byte b : bytes) {
    h ^= static_cast<uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(std::as_bytes(std::span(s.data(), s.size())), h);
}

// Raw parsed container: records, metadata and the data region.
class TensorFile {
 public:
  static TensorFile read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
    return parse(std::move(bytes), path.string());
  }

  static TensorFile parse(std::vector<std::byte> bytes, const std::string& label) {
    if (bytes.size() < 8) fail(ErrorKind::kParse, label + ": truncated header length");
    uint64_t n = 0;
    std::memcpy(&n, bytes.data(), 8);
    if (n > bytes.size() - 8) {
      fail(ErrorKind::kParse, label + ": header length " + std::to_string(n) +
                                  " exceeds file size " + std::to_string(bytes.size()));
    }
    nlohmann::json header;
    try {
      const auto* p = reinterpret_cast<const char*>(bytes.data()) + 8;
      header = nlohmann::json::parse(p, p + n);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, label + ": malformed header: " + e.what());
    }
    if (!header.is_object()) fail(ErrorKind::kParse, label + ": header is not an object");

    TensorFile file;
    file.content_hash_ = fnv1a64(bytes);
    const std::size_t data_begin = 8 + static_cast<std::size_t>(n);
    const std::size_t data_size = bytes.size() - data_begin;
    try {
      for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == kMetadataKey) {
          for (auto m = it.value().begin(); m != it.value().end(); ++m) {
            file.metadata_[m.key()] = m.value().get<std::string>();
          }
          continue;
        }
        const auto& e = it.value();
        TensorRecord rec;
        rec.name = it.key();
        rec.dtype = e.at("dtype").get<std::string>();
        rec.shape = e.at("shape").get<std::vector<std::size_t>>();
        const auto offs = e.at("data_offsets").get<std::vector<std::size_t>>();
        if (offs.size() != 2) fail(ErrorKind::kParse, rec.name + ": data_offsets needs 2 entries");
        rec.begin = offs[0];
        rec.end = offs[1];
        file.records_.emplace(rec.name, std::move(rec));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, label + ": malformed header entry: " + e.what());
    }

    std::vector<const TensorRecord*> by_offset;
    for (const auto& [name, rec] : file.records_) {
      if (rec.dtype != "F32") {
        fail(ErrorKind::kSchema, name + ": unsupported dtype " + rec.dtype);
      }
      if (rec.begin > rec.end || rec.end > data_size) {
        fail(ErrorKind::kIntegrity, name + ": data range [" + std::to_string(rec.begin) +
                                        "," + std::to_string(rec.end) +
                                        ") outside data region of " +
                                        std::to_string(data_size) + " bytes");
      }
      if (rec.element_count() * 4 != rec.end - rec.begin) {
        fail(ErrorKind::kIntegrity, name + ": byte range does not match shape");
      }
      by_offset.push_back(&rec);
    }
    std::sort(by_offset.begin(), by_offset.end(),
              [](const auto* a, const auto* b) { return a->begin < b->begin; });
    for (std::size_t i = 1; i < by_offset.size(); ++i) {
      if (by_offset[i]->begin < by_offset[i - 1]->end) {
        fail(ErrorKind::kIntegrity, by_offset[i - 1]->name + " overlaps " +
                                        by_offset[i]->name);
      }
    }
    bytes.erase(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(data_begin));
    file.data_ = std::make_shared<const std::vector<std::byte>>(std::move(bytes));
    return file;
  }

  static void write(const std::filesystem::path& path,
                    const std::vector<NamedTensor>& tensors, const Metadata& metadata) {
    nlohmann::json header = nlohmann::json::object();
    std::vector<const NamedTensor*> sorted;
    for (const auto& t : tensors) sorted.push_back(&t);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->name < b->name; });
    std::size_t offset = 0;
    for (const auto* t : sorted) {
      std::size_t count = 1;
      for (auto d : t->shape) count *= d;
      if (count != t->values.size()) {
        fail(ErrorKind::kShape, t->name + ": value count does not match shape");
      }
      header[t->name] = {{"dtype", "F32"},
                         {"shape", t->shape},
                         {"data_offsets", {offset, offset + count * 4}}};
      offset += count * 4;
    }
    if (!metadata.empty()) header[std::string(kMetadataKey)] = metadata;
    std::string text = header.dump();
    // Keep the data region 8-byte aligned.
    while ((8 + text.size()) % 8 != 0) text.push_back(' ');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
    const uint64_t n = text.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* t : sorted) {
      out.write(reinterpret_cast<const char*>(t->values.data()),
                static_cast<std::streamsize>(t->values.size() * 4));
    }
    if (!out) fail(ErrorKind::kIo, "short write on " + path.string());
  }

  const std::map<std::string, TensorRecord>& records() const noexcept { return records_; }
  const Metadata& metadata() const noexcept { return metadata_; }
  uint64_t content_hash() const noexcept { return content_hash_; }

  const TensorRecord& record(const std::string& name) const {
    const auto it = records_.find(name);
    if (it == records_.end()) fail(ErrorKind::kLookup, "unknown tensor: " + name);
    return it->second;
  }

  std::vector<float> values(const std::string& name) const {
    const auto& rec = record(name);
    std::vector<float> out(rec.element_count());
    std::memcpy(out.data(), data_->data() + rec.begin, rec.end - rec.begin);
    return out;
  }

  // 2-D tensors keep their shape; 1-D tensors become a single row.
  Matrix matrix(const std::string& name) const {
    const auto& rec = record(name);
    if (rec.shape.size() == 2) return Matrix(rec.shape[0], rec.shape[1], values(name));
    if (rec.shape.size() == 1) return Matrix(1, rec.shape[0], values(name));
    fail(ErrorKind::kShape, name + ": expected a 1-D or 2-D tensor");
  }

 private:
  std::map<std::string, TensorRecord> records_;
  Metadata metadata_;
  std::shared_ptr<const std::vector<std::byte>> data_;
  uint64_t content_hash_ = 0;
};

enum class Activation { kGelu, kQuickGelu };

struct ModelConfig {
  std::size_t image_layers = 2;
  std::size_t image_width = 8;
  std::size_t image_heads = 2;
  std::size_t image_mlp_width = 32;
  std::size_t patch_size = 4;
  std::size_t native_grid = 4;
  std::size_t embed_dim = 8;
  std::size_t text_layers = 2;
  std::size_t text_width = 8;
  std::size_t text_heads = 2;
  std::size_t text_mlp_width = 32;
  std::size_t context_length = 16;
  std::size_t vocab_size = 0;
  std::array<float, 3> pixel_mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> pixel_std{0.25f, 0.25f, 0.25f};
  Activation activation = Activation::kGelu;

  std::size_t native_resolution() const { return native_grid * patch_size; }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) fail(ErrorKind::kSchema, std::string(what) + " must be >= 1");
    };
    positive(image_layers, "image_layers");
    positive(image_width, "image_width");
    positive(image_heads, "image_heads");
    positive(image_mlp_width, "image_mlp_width");
    positive(patch_size, "patch_size");
    positive(native_grid, "native_grid");
    positive(embed_dim, "embed_dim");
    positive(text_layers, "text_layers");
    positive(text_width, "text_width");
    positive(text_heads, "text_heads");
    positive(text_mlp_width, "text_mlp_width");
    if (image_width % image_heads != 0) {
      fail(ErrorKind::kSchema, "image_width not divisible by image_heads");
    }
    if (text_width % text_heads != 0) {
      fail(ErrorKind::kSchema, "text_width not divisible by text_heads");
    }
    if (context_length < 2) fail(ErrorKind::kSchema, "context_length must be >= 2");
    for (float s : pixel_std) {
      if (!(s > 0.0f)) fail(ErrorKind::kSchema, "pixel_std entries must be positive");
    }
  }

  Metadata to_metadata() const {
    Metadata m;
    auto num = [](float v) {
      char buf[32];
      auto r = std::to_chars(buf, buf + sizeof(buf), v);
      return std::string(buf, r.ptr);
    };
    auto triple = [&](const std::array<float, 3>& a) {
      return num(a[0]) + "," + num(a[1]) + "," + num(a[2]);
    };
    m["image_layers"] = std::to_string(image_layers);
    m["image_width"] = std::to_string(image_width);
    m["image_heads"] = std::to_string(image_heads);
    m["image_mlp_width"] = std::to_string(image_mlp_width);
    m["patch_size"] = std::to_string(patch_size);
    m["native_grid"] = std::to_string(native_grid);
    m["embed_dim"] = std::to_string(embed_dim);
    m["text_layers"] = std::to_string(text_layers);
    m["text_width"] = std::to_string(text_width);
    m["text_heads"] = std::to_string(text_heads);
    m["text_mlp_width"] = std::to_string(text_mlp_width);
    m["context_length"] = std::to_string(context_length);
    m["vocab_size"] = std::to_string(vocab_size);
    m["pixel_mean"] = triple(pixel_mean);
    m["pixel_std"] = triple(pixel_std);
    m["activation"] = activation == Activation::kGelu ? "gelu" : "quick_gelu";
    return m;
  }

  static ModelConfig from_metadata(const Metadata& m) {
    auto get = [&](const std::string& key) -> const std::string& {
      const auto it = m.find(key);
      if (it == m.end()) fail(ErrorKind::kSchema, "metadata missing '" + key + "'");
      return it->second;
    };
    auto count = [&](const std::string& key) {
      const auto& s = get(key);
      std::size_t v = 0;
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        fail(ErrorKind::kParse, "metadata '" + key + "' is not a count: " + s);
      }
      return v;
    };
    auto triple = [&](const std::string& key) {
      const auto& s = get(key);
      std::array<float, 3> out{};
      const char* p = s.data();
      const char* end = s.data() + s.size();
      for (int i = 0; i < 3; ++i) {
        const auto r = std::from_chars(p, end, out[static_cast<std::size_t>(i)]);
        if (r.ec != std::errc()) fail(ErrorKind::kParse, "metadata '" + key + "' malformed");
        p = r.ptr;
        if (i < 2) {
          if (p == end || *p != ',') fail(ErrorKind::kParse, "metadata '" + key + "' malformed");
          ++p;
        }
      }
      if (p != end) fail(ErrorKind::kParse, "metadata '" + key + "' malformed");
      return out;
    };
    ModelConfig c;
    c.image_layers = count("image_layers");
    c.image_width = count("image_width");
    c.image_heads = count("image_heads");
    c.image_mlp_width = m.contains("image_mlp_width") ? count("image_mlp_width")
                                                      : 4 * c.image_width;
    c.patch_size = count("patch_size");
    c.native_grid = count("native_grid");
    c.embed_dim = count("embed_dim");
    c.text_layers = count("text_layers");
    c.text_width = count("text_width");
    c.text_heads = count("text_heads");
    c.text_mlp_width = m.contains("text_mlp_width") ? count("text_mlp_width")
                                                    : 4 * c.text_width;
    c.context_length = count("context_length");
    c.vocab_size = count("vocab_size");
    c.pixel_mean = triple("pixel_mean");
    c.pixel_std = triple("pixel_std");
    if (const auto it = m.find("activation"); it != m.end()) {
      if (it->second == "gelu") {
        c.activation = Activation::kGelu;
      } else if (it->second == "quick_gelu") {
        c.activation = Activation::kQuickGelu;
      } else {
        fail(ErrorKind::kSchema, "unknown activation '" + it->second + "'");
      }
    }
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

using ShapeSpec = std::pair<std::string, std::vector<std::size_t>>;

inline void append_block_shapes(std::vector<ShapeSpec>& out, const std::string& prefix,
                                std::size_t width, std::size_t mlp) {
  out.push_back({prefix + ".ln_1.weight", {width}});
  out.push_back({prefix + ".ln_1.bias", {width}});
  for (const char* p : {"q", "k", "v", "out"}) {
    out.push_back({prefix + ".attn." + p + ".weight", {width, width}});
    out.push_back({prefix + ".attn." + p + ".bias", {width}});
  }
  out.push_back({prefix + ".ln_2.weight", {width}});
  out.push_back({prefix + ".ln_2.bias", {width}});
  out.push_back({prefix + ".mlp.fc.weight", {width, mlp}});
  out.push_back({prefix + ".mlp.fc.bias", {mlp}});
  out.push_back({prefix + ".mlp.proj.weight", {mlp, width}});
  out.push_back({prefix + ".mlp.proj.bias", {width}});
}

// Every tensor the configured architecture needs, with its expected shape.
inline std::vector<ShapeSpec> required_tensors(const ModelConfig& c) {
  std::vector<ShapeSpec> out;
  const std::size_t d = c.image_width;
  const std::size_t w = c.text_width;
  out.push_back({"image.class_embedding", {d}});
  out.push_back({"image.patch_embed.weight", {3 * c.patch_size * c.patch_size, d}});
  out.push_back({"image.pos_embed", {c.native_grid * c.native_grid + 1, d}});
  out.push_back({"image.ln_pre.weight", {d}});
  out.push_back({"image.ln_pre.bias", {d}});
  for (std::size_t i = 0; i < c.image_layers; ++i) {
    append_block_shapes(out, "image.block." + std::to_string(i), d, c.image_mlp_width);
  }
  out.push_back({"image.ln_post.weight", {d}});
  out.push_back({"image.ln_post.bias", {d}});
  out.push_back({"image.proj", {d, c.embed_dim}});
  out.push_back({"text.token_embed", {c.vocab_size, w}});
  out.push_back({"text.pos_embed", {c.context_length, w}});
  for (std::size_t i = 0; i < c.text_layers; ++i) {
    append_block_shapes(out, "text.block." + std::to_string(i), w, c.text_mlp_width);
  }
  out.push_back({"text.ln_final.weight", {w}});
  out.push_back({"text.ln_final.bias", {w}});
  out.push_back({"text.proj", {w, c.embed_dim}});
  out.push_back({"logit_scale", {1}});
  return out;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Frozen encoder weights, architecture config and tokenizer vocabulary.
// Immutable after load; copies share the underlying data.
class WeightBundle {
 public:
  static WeightBundle load(const std::filesystem::path& path) {
    WeightBundle b;
    b.file_ = TensorFile::read(path);
    b.config_ = ModelConfig::from_metadata(b.file_.metadata());
    for (const auto& [name, shape] : required_tensors(b.config_)) {
      const auto it = b.file_.records().find(name);
      if (it == b.file_.records().end()) {
        fail(ErrorKind::kSchema, "missing tensor '" + name + "'");
      }
      if (it->second.shape != shape) {
        fail(ErrorKind::kSchema, "tensor '" + name + "' has shape " +
                                     shape_string(it->second.shape) + ", expected " +
                                     shape_string(shape));
      }
    }
    const auto& meta = b.file_.metadata();
    const auto vocab_it = meta.find("vocab_file");
    const auto merges_it = meta.find("merges_file");
    if (vocab_it == meta.end() || merges_it == meta.end()) {
      fail(ErrorKind::kSchema, "metadata must name vocab_file and merges_file");
    }
    const auto dir = path.parent_path();
    b.vocab_ = std::make_shared<const BpeVocab>(
        BpeVocab::from_files(dir / vocab_it->second, dir / merges_it->second));
    if (b.vocab_->size() != b.config_.vocab_size) {
      fail(ErrorKind::kSchema, "vocabulary has " + std::to_string(b.vocab_->size()) +
                                   " entries, config says " +
                                   std::to_string(b.config_.vocab_size));
    }
    return b;
  }

  const ModelConfig& config() const noexcept { return config_; }
  const std::map<std::string, TensorRecord>& tensors() const noexcept {
    return file_.records();
  }
  const Metadata& metadata() const noexcept { return file_.metadata(); }
  const BpeVocab& vocab() const noexcept { return *vocab_; }
  uint64_t content_hash() const noexcept { return file_.content_hash(); }

  std::vector<float> values(const std::string& name) const { return file_.values(name); }
  Matrix matrix(const std::string& name) const { return file_.matrix(name); }
  float scalar(const std::string& name) const {
    const auto v = values(name);
    if (v.size() != 1) fail(ErrorKind::kShape, name + " is not a scalar");
    return v[0];
  }

 private:
  TensorFile file_;
  ModelConfig config_;
  std::shared_ptr<const BpeVocab> vocab_;
};

inline WeightBundle load_bundle(const std::filesystem::path& path) {
  return WeightBundle::load(path);
}

// Writes `path` plus "<stem>.vocab.json" and "<stem>.merges.txt" beside it.
inline void write_bundle(const std::filesystem::path& path, const ModelConfig& config,
                         const std::vector<NamedTensor>& tensors, const BpeVocab& vocab,
                         Metadata extra = {}) {
  const std::string stem = path.stem().string();
  const std::string vocab_name = stem + ".vocab.json";
  const std::string merges_name = stem + ".merges.txt";
  vocab.write_files(path.parent_path() / vocab_name, path.parent_path() / merges_name);
  Metadata meta = config.to_metadata();
  meta["vocab_file"] = vocab_name;
  meta["merges_file"] = merges_name;
  for (auto& [k, v] : extra) meta[k] = std::move(v);
  TensorFile::write(path, tensors, meta);
}

// Words the fixture tokenizer knows as whole tokens.
inline const std::vector<std::string>& fixture_words() {
  static const std::vector<std::string> words = {
      "a", "photo", "of", "the", "cat", "dog", "bird", "car", "person", "sky",
      "tree", "road", "grass", "water", "boat", "chair"};
  return words;
}

// Deterministic uniform floats in [-1, 1) from a 64-bit Mersenne twister;
// the conversion is spelled out so files are identical across standard
// library implementations.
class FixtureRng {
 public:
  explicit FixtureRng(uint64_t seed) : engine_(seed) {}
  float symmetric() {
    const uint64_t bits = engine_() >> 40;  // 24 random bits
    return static_cast<float>(bits) * (2.0f / 16777216.0f) - 1.0f;
  }

 private:
  std::mt19937_64 engine_;
};

inline void generate_fixture(ModelConfig config, uint64_t seed,
                             const std::filesystem::path& path,
                             float logit_scale = 10.0f) {
  const BpeVocab vocab = make_toy_vocab(fixture_words());
  config.vocab_size = vocab.size();
  config.validate();
  FixtureRng rng(seed);
  std::vector<NamedTensor> tensors;
  for (const auto& [name, shape] : required_tensors(config)) {
    NamedTensor t{name, shape, {}};
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    t.values.resize(count);
    float scale = 0.5f;
    float offset = 0.0f;
    const bool is_norm = name.find(".ln_") != std::string::npos;
    if (name == "logit_scale") {
      scale = 0.0f;
      offset = logit_scale;
    } else if (is_norm && name.ends_with(".weight")) {
      scale = 0.1f;
      offset = 1.0f;
    } else if (is_norm) {
      scale = 0.1f;
    } else if (shape.size() == 2 && name.find("embed") == std::string::npos) {
      scale = 1.0f / std::sqrt(static_cast<float>(shape[0]));
    } else if (name.ends_with(".bias")) {
      scale = 0.05f;
    }
    for (float& v : t.values) v = offset + scale * rng.symmetric();
    tensors.push_back(std::move(t));
  }
  write_bundle(path, config, tensors, vocab, {{"fixture_seed", std::to_string(seed)}});
}

}  // namespace tagclip

#endif  // TAGCLIP_BUNDLE_HPP_
