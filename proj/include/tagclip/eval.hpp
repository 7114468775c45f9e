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

// Multi-label evaluation: per-class average precision, mAP, ground-truth
// ingestion and pseudo-label JSONL.

#ifndef TAGCLIP_EVAL_HPP_
#define TAGCLIP_EVAL_HPP_

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tagclip/errors.hpp"

namespace tagclip {

// Mean over positives of the precision at each positive's rank, ranking by
// descending score with ties kept in input order. Empty when there are no
// positives.
inline std::optional<double> average_precision(std::span<const float> scores,
                                               const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::kShape, "scores/labels length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

// image id -> foreground class names present.
using GroundTruth = std::map<std::string, std::set<std::string>>;

struct PredictionRow {
  std::vector<float> scores;           // one per class, pre-threshold
  std::vector<std::size_t> positives;  // ascending class indices

  bool operator==(const PredictionRow&) const = default;
};

struct PredictionTable {
  std::vector<std::string> classes;
  std::map<std::string, PredictionRow> rows;  // ordered by image id

  bool operator==(const PredictionTable&) const = default;
};

struct ClassAp {
  std::string name;
  std::optional<double> ap;  // empty: no positives, excluded from the mean
  std::size_t positives = 0;
};

struct MapReport {
  std::vector<ClassAp> per_class;
  double mean_ap = 0.0;
  std::size_t evaluated_classes = 0;
  std::size_t images = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["mAP"] = mean_ap;
    j["images"] = images;
    j["evaluated_classes"] = evaluated_classes;
    j["per_class"] = nlohmann::ordered_json::array();
    for (const auto& c : per_class) {
      nlohmann::ordered_json e;
      e["class"] = c.name;
      e["ap"] = c.ap ? nlohmann::ordered_json(*c.ap) : nlohmann::ordered_json();
      e["positives"] = c.positives;
      j["per_class"].push_back(std::move(e));
    }
    return j;
  }

  static MapReport from_json(const nlohmann::json& j) {
    MapReport r;
    try {
      r.mean_ap = j.at("mAP").get<double>();
      r.images = j.at("images").get<std::size_t>();
      r.evaluated_classes = j.at("evaluated_classes").get<std::size_t>();
      for (const auto& e : j.at("per_class")) {
        ClassAp c;
        c.name = e.at("class").get<std::string>();
        if (!e.at("ap").is_null()) c.ap = e.at("ap").get<double>();
        c.positives = e.at("positives").get<std::size_t>();
        r.per_class.push_back(std::move(c));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, std::string("metrics report: ") + e.what());
    }
    return r;
  }
};

// Unweighted mean of per-class AP over classes with at least one positive.
// Every annotated image needs a prediction and vice versa.
inline MapReport mean_ap(const PredictionTable& preds, const GroundTruth& gt) {
  std::vector<std::string> missing;
  std::vector<std::string> extra;
  for (const auto& [id, labels] : gt) {
    if (!preds.rows.contains(id)) missing.push_back(id);
  }
  for (const auto& [id, row] : preds.rows) {
    if (!gt.contains(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "prediction/ground-truth id mismatch;";
    auto list = [&](const char* what, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string(" ") + what + ":";
      for (std::size_t i = 0; i < ids.size() && i < 20; ++i) msg += " " + ids[i];
      if (ids.size() > 20) msg += " ...(" + std::to_string(ids.size()) + " total)";
    };
    list("missing predictions", missing);
    list("unannotated predictions", extra);
    fail(ErrorKind::kData, msg);
  }
  std::map<std::string, std::size_t> class_index;
  for (std::size_t c = 0; c < preds.classes.size(); ++c) class_index[preds.classes[c]] = c;
  for (const auto& [id, labels] : gt) {
    for (const auto& name : labels) {
      if (!class_index.contains(name)) {
        fail(ErrorKind::kData, "image " + id + " is annotated with unknown class '" + name + "'");
      }
    }
  }
  for (const auto& [id, row] : preds.rows) {
    if (row.scores.size() != preds.classes.size()) {
      fail(ErrorKind::kData, "image " + id + " has " + std::to_string(row.scores.size()) +
                                 " scores for " + std::to_string(preds.classes.size()) +
                                 " classes");
    }
  }

  MapReport report;
  report.images = gt.size();
  double sum = 0.0;
  for (std::size_t c = 0; c < preds.classes.size(); ++c) {
    std::vector<float> scores;
    std::vector<bool> labels;
    for (const auto& [id, row] : preds.rows) {
      scores.push_back(row.scores[c]);
      labels.push_back(gt.at(id).contains(preds.classes[c]));
    }
    ClassAp entry{preds.classes[c], average_precision(scores, labels),
                  static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true))};
    if (entry.ap) {
      sum += *entry.ap;
      ++report.evaluated_classes;
    }
    report.per_class.push_back(std::move(entry));
  }
  if (report.evaluated_classes == 0) fail(ErrorKind::kData, "no class has a positive label");
  report.mean_ap = sum / static_cast<double>(report.evaluated_classes);
  return report;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

// {"image id": ["class", ...], ...}
inline GroundTruth parse_ground_truth(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::kParse, "ground truth must map image id to class list");
  GroundTruth gt;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto names = it.value().get<std::vector<std::string>>();
      gt[it.key()] = std::set<std::string>(names.begin(), names.end());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("ground truth: ") + e.what());
  }
  return gt;
}

// Object names of one VOC annotation XML; objects flagged difficult are
// skipped when `skip_difficult` is set.
inline std::set<std::string> parse_voc_annotation(std::istream& in, bool skip_difficult) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    fail(ErrorKind::kParse, std::string("VOC annotation: ") + e.what());
  }
  std::set<std::string> names;
  const auto ann = tree.get_child_optional("annotation");
  if (!ann) fail(ErrorKind::kParse, "VOC annotation lacks <annotation>");
  for (const auto& [tag, obj] : *ann) {
    if (tag != "object") continue;
    if (skip_difficult && obj.get<int>("difficult", 0) != 0) continue;
    const auto name = obj.get_optional<std::string>("name");
    if (!name) fail(ErrorKind::kParse, "VOC object without <name>");
    names.insert(*name);
  }
  return names;
}

// Every *.xml in `dir`, keyed by file stem.
inline GroundTruth load_voc_directory(const std::filesystem::path& dir, bool skip_difficult) {
  GroundTruth gt;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".xml") continue;
    std::ifstream in(entry.path());
    if (!in) fail(ErrorKind::kIo, "cannot open " + entry.path().string());
    gt[entry.path().stem().string()] = parse_voc_annotation(in, skip_difficult);
  }
  return gt;
}

// COCO instances JSON, keyed by the stem of each image's file_name. Images
// without annotations get an empty label set.
inline GroundTruth parse_coco_instances(const nlohmann::json& j) {
  GroundTruth gt;
  try {
    std::map<long long, std::string> category;
    for (const auto& c : j.at("categories")) {
      category[c.at("id").get<long long>()] = c.at("name").get<std::string>();
    }
    std::map<long long, std::string> image_id;
    for (const auto& im : j.at("images")) {
      const auto stem =
          std::filesystem::path(im.at("file_name").get<std::string>()).stem().string();
      image_id[im.at("id").get<long long>()] = stem;
      gt[stem];
    }
    for (const auto& a : j.at("annotations")) {
      const auto img = image_id.find(a.at("image_id").get<long long>());
      const auto cat = category.find(a.at("category_id").get<long long>());
      if (img == image_id.end() || cat == category.end()) {
        fail(ErrorKind::kParse, "COCO annotation references unknown image or category");
      }
      gt[img->second].insert(cat->second);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("COCO instances: ") + e.what());
  }
  return gt;
}

// One record per line, images in id order:
//   {"image":"<id>","tags":[{"class":"<name>","score":s},...],"scores":[...]}
inline std::string pseudo_label_line(const std::string& id, const PredictionRow& row,
                                     const std::vector<std::string>& classes) {
  nlohmann::ordered_json rec;
  rec["image"] = id;
  rec["tags"] = nlohmann::ordered_json::array();
  for (auto c : row.positives) {
    nlohmann::ordered_json tag;
    tag["class"] = classes.at(c);
    tag["score"] = row.scores.at(c);
    rec["tags"].push_back(std::move(tag));
  }
  rec["scores"] = row.scores;
  return rec.dump();
}

inline void write_pseudo_labels(std::ostream& out, const PredictionTable& preds) {
  for (const auto& [id, row] : preds.rows) {
    out << pseudo_label_line(id, row, preds.classes) << '\n';
  }
}

inline void export_pseudo_labels(const PredictionTable& preds,
                                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  write_pseudo_labels(out, preds);
  if (!out) fail(ErrorKind::kIo, "short write on " + path.string());
}

inline PredictionTable read_pseudo_labels(std::istream& in,
                                          const std::vector<std::string>& classes) {
  PredictionTable table;
  table.classes = classes;
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < classes.size(); ++c) index[classes[c]] = c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      PredictionRow row;
      row.scores = rec.at("scores").get<std::vector<float>>();
      if (row.scores.size() != classes.size()) {
        fail(ErrorKind::kData, "line " + std::to_string(line_no) + ": expected " +
                                   std::to_string(classes.size()) + " scores");
      }
      for (const auto& tag : rec.at("tags")) {
        const auto name = tag.at("class").get<std::string>();
        const auto it = index.find(name);
        if (it == index.end()) {
          fail(ErrorKind::kData, "line " + std::to_string(line_no) + ": unknown class '" + name + "'");
        }
        row.positives.push_back(it->second);
      }
      std::sort(row.positives.begin(), row.positives.end());
      const auto id = rec.at("image").get<std::string>();
      if (!table.rows.emplace(id, std::move(row)).second) {
        fail(ErrorKind::kData, "duplicate image id '" + id + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, "pseudo labels line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

inline PredictionTable read_pseudo_labels(const std::filesystem::path& path,
                                          const std::vector<std::string>& classes) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return read_pseudo_labels(in, classes);
}

}  // namespace tagclip

#endif  // TAGCLIP_EVAL_HPP_
