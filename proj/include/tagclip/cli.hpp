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

// Command implementations behind the `tagclip` executable. Each command takes
// a plain options struct so it can be driven from tests without argv.

#ifndef TAGCLIP_CLI_HPP_
#define TAGCLIP_CLI_HPP_

#include <glob.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tagclip/bundle.hpp"
#include "tagclip/errors.hpp"
#include "tagclip/eval.hpp"
#include "tagclip/image_io.hpp"
#include "tagclip/tagging.hpp"
#include "tagclip/text_encoder.hpp"
#include "tagclip/vision_encoder.hpp"

namespace tagclip::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitIo = 4,
  kExitInternal = 5,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
    case ErrorKind::kConfig:
      return kExitUsage;
    case ErrorKind::kIo:
      return kExitIo;
    case ErrorKind::kShape:
    case ErrorKind::kPrecondition:
      return kExitInternal;
    default:
      return kExitData;
  }
}

// "tagclip: error[<kind>]: <message>" on one line.
inline std::string error_line(std::string_view kind, std::string message) {
  for (char& ch : message) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return "tagclip: error[" + std::string(kind) + "]: " + message;
}

inline std::vector<std::filesystem::path> expand_inputs(const std::vector<std::string>& patterns) {
  std::vector<std::filesystem::path> out;
  for (const auto& pattern : patterns) {
    glob_t g{};
    const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
    if (rc == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    } else if (rc != GLOB_NOMATCH) {
      globfree(&g);
      fail(ErrorKind::kIo, "cannot expand input pattern " + pattern);
    }
    globfree(&g);
  }
  return out;
}

inline std::vector<std::string> read_input_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open input list " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline std::vector<float> parse_float_list(const std::string& s) {
  std::vector<float> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stof(item));
  return out;
}

// Everything a `tag` run needs.
struct TagManifest {
  std::filesystem::path bundle;
  std::filesystem::path classes;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> templates;
  std::optional<std::filesystem::path> cache_dir;
  std::vector<std::string> inputs;  // paths or glob patterns
  std::optional<std::filesystem::path> input_list;
  std::optional<std::filesystem::path> out;  // empty: standard output
  std::size_t workers = 1;
  // Flag overrides applied on top of the config file.
  std::optional<bool> dmar;
  std::optional<bool> cwr;
  std::optional<float> lambda;
  std::optional<float> mu1;
  std::optional<float> mu2;
  std::optional<std::size_t> k_votes;
  std::vector<std::size_t> psi;
  std::optional<ResolutionMode> resolution;
  std::optional<MaskScope> mask_scope;
  std::optional<float> temperature;
};

inline TagConfig resolve_config(const TagManifest& m) {
  TagConfig cfg;
  if (m.config) cfg = TagConfig::from_json(read_json_file(*m.config));
  if (m.dmar) cfg.dmar = *m.dmar;
  if (m.cwr) cfg.cwr = *m.cwr;
  if (m.lambda) cfg.lambda = *m.lambda;
  if (m.mu1) cfg.mu1 = *m.mu1;
  if (m.mu2) cfg.mu2 = *m.mu2;
  if (m.k_votes) cfg.vote_threshold = *m.k_votes;
  if (!m.psi.empty()) cfg.refine_layers = m.psi;
  if (m.resolution) cfg.resolution = *m.resolution;
  if (m.mask_scope) cfg.mask_scope = *m.mask_scope;
  if (m.temperature) cfg.temperature = *m.temperature;
  return cfg;
}

inline std::vector<PromptTemplate> resolve_templates(const TagManifest& m, const ClassSet& cs) {
  if (m.templates) {
    const auto j = read_json_file(*m.templates);
    try {
      return make_templates(j.get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kConfig, "templates file must be a JSON list of strings: " +
                                   std::string(e.what()));
    }
  }
  if (!cs.templates.empty()) return make_templates(cs.templates);
  return make_templates(default_template_patterns());
}

// Tags every input image and writes pseudo-label JSONL. Images that fail to
// decode are logged and skipped; the run fails only if none succeed.
inline int cmd_tag(const TagManifest& m, std::ostream& log = std::cerr) {
  for (const auto& p : {m.bundle, m.classes}) {
    if (!std::filesystem::exists(p)) fail(ErrorKind::kIo, "no such file: " + p.string());
  }
  auto patterns = m.inputs;
  if (m.input_list) {
    const auto listed = read_input_list(*m.input_list);
    patterns.insert(patterns.end(), listed.begin(), listed.end());
  }
  const auto inputs = expand_inputs(patterns);
  if (inputs.empty()) fail(ErrorKind::kUsage, "no input images matched");
  std::map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto id = inputs[i].stem().string();
    if (!ids.emplace(id, i).second) {
      fail(ErrorKind::kData, "two inputs share the image id '" + id + "'");
    }
  }

  const WeightBundle bundle = load_bundle(m.bundle);
  const ClassSet classes = ClassSet::load(m.classes);
  const TagConfig cfg = resolve_config(m);
  cfg.validate(bundle.config().image_layers);
  const auto templates = resolve_templates(m, classes);
  const std::size_t workers = std::max<std::size_t>(1, m.workers);

  const TextModel text(bundle);
  const ClassifierMatrix classifier =
      m.cache_dir ? cached_classifier(*m.cache_dir, bundle.content_hash(), classes, templates,
                                      text, workers)
                  : build_classifier(classes, templates, text, workers);
  const VisionModel vision(bundle);
  const float temperature = bundle.scalar("logit_scale");
  log << "tagclip: " << inputs.size() << " image(s), " << classes.foreground_count()
      << " foreground + " << classes.background.size() << " background classes, "
      << templates.size() << " template(s), " << workers << " worker(s)\n";

  std::vector<std::optional<TagResult>> results(inputs.size());
  std::vector<std::string> errors(inputs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      try {
        results[i] = tag_image(read_image(inputs[i]), vision, classifier, classes, cfg,
                               temperature);
      } catch (const Error& e) {
        errors[i] = std::string(error_kind_name(e.kind())) + ": " + e.what();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, inputs.size()); ++w) pool.emplace_back(work);
  }

  PredictionTable table;
  table.classes = classes.foreground_names();
  std::map<std::size_t, std::size_t> histogram;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!results[i]) {
      ++failed;
      log << "tagclip: skipped " << inputs[i].string() << " (" << errors[i] << ")\n";
      continue;
    }
    PredictionRow row{results[i]->final_scores(), results[i]->positives()};
    ++histogram[row.positives.size()];
    table.rows.emplace(inputs[i].stem().string(), std::move(row));
  }
  if (failed == inputs.size()) fail(ErrorKind::kData, "every input image failed");

  if (m.out) {
    export_pseudo_labels(table, *m.out);
  } else {
    write_pseudo_labels(std::cout, table);
    std::cout.flush();
  }
  log << "tagclip: tagged " << table.rows.size() << " image(s), skipped " << failed << "\n";
  log << "tagclip: tags per image:";
  for (const auto& [count, images] : histogram) log << ' ' << count << "->" << images;
  log << '\n';
  return kExitOk;
}

struct EvalOptions {
  std::filesystem::path predictions;
  std::filesystem::path classes;
  std::optional<std::filesystem::path> gt_json;
  std::optional<std::filesystem::path> voc_dir;
  std::optional<std::filesystem::path> coco_json;
  bool skip_difficult = false;
  std::optional<std::filesystem::path> out;  // JSON report
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out = std::cout,
                    std::ostream& log = std::cerr) {
  const int sources = o.gt_json.has_value() + o.voc_dir.has_value() + o.coco_json.has_value();
  if (sources != 1) fail(ErrorKind::kUsage, "give exactly one of --gt, --voc-dir, --coco");
  const ClassSet classes = ClassSet::load(o.classes);
  const PredictionTable preds = read_pseudo_labels(o.predictions, classes.foreground_names());
  GroundTruth gt;
  if (o.gt_json) gt = parse_ground_truth(read_json_file(*o.gt_json));
  if (o.voc_dir) gt = load_voc_directory(*o.voc_dir, o.skip_difficult);
  if (o.coco_json) gt = parse_coco_instances(read_json_file(*o.coco_json));

  const MapReport report = mean_ap(preds, gt);
  for (const auto& c : report.per_class) {
    if (!c.ap) log << "tagclip: warning: class '" << c.name << "' has no positives; excluded from mAP\n";
  }
  out << std::left << std::setw(24) << "class" << std::right << std::setw(10) << "AP"
      << std::setw(10) << "pos" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& c : report.per_class) {
    out << std::left << std::setw(24) << c.name << std::right << std::setw(10);
    if (c.ap) {
      out << *c.ap * 100.0;
    } else {
      out << "-";
    }
    out << std::setw(10) << c.positives << '\n';
  }
  out << "mAP " << report.mean_ap * 100.0 << " over " << report.evaluated_classes
      << " classes, " << report.images << " images\n";
  if (o.out) {
    std::ofstream f(*o.out, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::kIo, "cannot write " + o.out->string());
    f << report.to_json().dump(2) << '\n';
    if (!f) fail(ErrorKind::kIo, "short write on " + o.out->string());
  }
  return kExitOk;
}

struct FixtureOptions {
  std::filesystem::path out;
  uint64_t seed = 0;
  ModelConfig config;
  std::size_t images = 0;
  std::optional<std::filesystem::path> image_dir;
  std::size_t image_width = 37;
  std::size_t image_height = 29;
};

// Synthetic scenes: a noisy background with a few solid rectangles.
inline RgbImage fixture_image(uint64_t seed, std::size_t width, std::size_t height) {
  FixtureRng rng(seed);
  auto byte = [&](float lo, float hi) {
    const float u = 0.5f * (rng.symmetric() + 1.0f);
    return static_cast<uint8_t>(lo + u * (hi - lo));
  };
  RgbImage img{width, height, std::vector<uint8_t>(width * height * 3)};
  const uint8_t base[3] = {byte(0, 255), byte(0, 255), byte(0, 255)};
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const int v = base[c] + static_cast<int>(rng.symmetric() * 20.0f);
        img.at(y, x, c) = static_cast<uint8_t>(std::clamp(v, 0, 255));
      }
    }
  }
  const int shapes = 1 + static_cast<int>(byte(0, 3));
  for (int s = 0; s < shapes; ++s) {
    const std::size_t x0 = byte(0, static_cast<float>(width) * 0.7f);
    const std::size_t y0 = byte(0, static_cast<float>(height) * 0.7f);
    const std::size_t x1 = std::min(width, x0 + 4 + byte(0, static_cast<float>(width) / 2));
    const std::size_t y1 = std::min(height, y0 + 4 + byte(0, static_cast<float>(height) / 2));
    const uint8_t color[3] = {byte(0, 255), byte(0, 255), byte(0, 255)};
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
      }
    }
  }
  return img;
}

inline int cmd_gen_fixture(const FixtureOptions& o, std::ostream& log = std::cerr) {
  if (o.out.has_parent_path() && !std::filesystem::is_directory(o.out.parent_path())) {
    fail(ErrorKind::kIo, "output directory does not exist: " + o.out.parent_path().string());
  }
  generate_fixture(o.config, o.seed, o.out);
  log << "tagclip: wrote fixture bundle " << o.out.string() << '\n';
  if (o.images > 0) {
    const auto dir = o.image_dir.value_or(o.out.parent_path() / "images");
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < o.images; ++i) {
      std::ostringstream name;
      name << "img_" << std::setw(3) << std::setfill('0') << i << ".png";
      write_png(dir / name.str(), fixture_image(o.seed * 1000003ULL + i, o.image_width,
                                                o.image_height));
    }
    log << "tagclip: wrote " << o.images << " image(s) to " << dir.string() << '\n';
  }
  return kExitOk;
}

// Tensor listing sorted by name, then the config.
inline int cmd_inspect_weights(const std::filesystem::path& path, std::ostream& out = std::cout) {
  const TensorFile file = TensorFile::read(path);
  for (const auto& [name, rec] : file.records()) {
    out << name << '\t' << rec.dtype << '\t' << shape_string(rec.shape) << '\n';
  }
  out << "# tensors " << file.records().size() << '\n';
  for (const auto& [key, value] : file.metadata()) out << "# " << key << " = " << value << '\n';
  return kExitOk;
}

}  // namespace tagclip::cli

#endif  // TAGCLIP_CLI_HPP_
