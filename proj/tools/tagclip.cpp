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

#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tagclip/cli.hpp"

namespace {

using namespace tagclip;
using namespace tagclip::cli;

std::vector<std::size_t> parse_layer_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    const auto v = std::stoul(item, &pos);
    if (pos != item.size()) throw std::invalid_argument(item);
    out.push_back(v);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free multi-label image tagging with frozen vision-language encoders"};
  app.require_subcommand(1);

  // tag
  TagManifest tag;
  std::string psi;
  std::string resolution;
  std::string mask_scope;
  bool no_dmar = false;
  bool no_cwr = false;
  auto* tag_cmd = app.add_subcommand("tag", "Tag images and write pseudo-label JSONL");
  tag_cmd->add_option("--bundle", tag.bundle, "Weight bundle")->required();
  tag_cmd->add_option("--classes", tag.classes, "Class-set JSON")->required();
  tag_cmd->add_option("--config", tag.config, "Tagging config JSON");
  tag_cmd->add_option("--templates", tag.templates, "Prompt template JSON list");
  tag_cmd->add_option("--cache-dir", tag.cache_dir, "Classifier cache directory");
  tag_cmd->add_option("--input-list", tag.input_list, "File with one image path per line");
  tag_cmd->add_option("--out", tag.out, "Output JSONL (default: standard output)");
  tag_cmd->add_option("--workers", tag.workers, "Worker threads")->check(CLI::PositiveNumber);
  tag_cmd->add_flag("--no-dmar", no_dmar, "Disable attention refinement");
  tag_cmd->add_flag("--no-cwr", no_cwr, "Disable class-wise reidentification");
  tag_cmd->add_option("--lambda", tag.lambda, "Local/global fusion weight");
  tag_cmd->add_option("--mu1", tag.mu1, "Candidate class threshold");
  tag_cmd->add_option("--mu2", tag.mu2, "Responsive patch threshold");
  tag_cmd->add_option("--k-votes", tag.k_votes, "Vote threshold K");
  tag_cmd->add_option("--psi", psi, "Comma-separated 1-based refinement layers");
  tag_cmd->add_option("--resolution", resolution, "original or 224")
      ->check(CLI::IsMember({"original", "224"}));
  tag_cmd->add_option("--mask-scope", mask_scope, "all or last")
      ->check(CLI::IsMember({"all", "last"}));
  tag_cmd->add_option("--temperature", tag.temperature, "Override the softmax temperature");
  tag_cmd->add_option("inputs", tag.inputs, "Image paths or glob patterns");

  // eval
  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Compute per-class AP and mAP");
  eval_cmd->add_option("--predictions", ev.predictions, "Pseudo-label JSONL")->required();
  eval_cmd->add_option("--classes", ev.classes, "Class-set JSON")->required();
  eval_cmd->add_option("--gt", ev.gt_json, "Ground-truth JSON (id -> class list)");
  eval_cmd->add_option("--voc-dir", ev.voc_dir, "Directory of VOC XML annotations");
  eval_cmd->add_option("--coco", ev.coco_json, "COCO instances JSON");
  eval_cmd->add_flag("--skip-difficult", ev.skip_difficult, "Ignore VOC difficult objects");
  eval_cmd->add_option("--out", ev.out, "Machine-readable JSON report");

  // gen-fixture
  FixtureOptions fx;
  auto* fx_cmd = app.add_subcommand("gen-fixture", "Write a small random weight bundle");
  fx_cmd->add_option("--out", fx.out, "Bundle path")->required();
  fx_cmd->add_option("--seed", fx.seed, "RNG seed");
  fx_cmd->add_option("--layers", fx.config.image_layers, "Image encoder layers");
  fx_cmd->add_option("--width", fx.config.image_width, "Image encoder width");
  fx_cmd->add_option("--heads", fx.config.image_heads, "Image encoder heads");
  fx_cmd->add_option("--mlp-width", fx.config.image_mlp_width, "Image MLP width");
  fx_cmd->add_option("--patch", fx.config.patch_size, "Patch size");
  fx_cmd->add_option("--grid", fx.config.native_grid, "Native patch grid side");
  fx_cmd->add_option("--embed-dim", fx.config.embed_dim, "Joint embedding dimension");
  fx_cmd->add_option("--text-layers", fx.config.text_layers, "Text encoder layers");
  fx_cmd->add_option("--text-width", fx.config.text_width, "Text encoder width");
  fx_cmd->add_option("--text-heads", fx.config.text_heads, "Text encoder heads");
  fx_cmd->add_option("--text-mlp-width", fx.config.text_mlp_width, "Text MLP width");
  fx_cmd->add_option("--context-length", fx.config.context_length, "Text context length");
  fx_cmd->add_option("--images", fx.images, "Also write this many synthetic PNG images");
  fx_cmd->add_option("--image-dir", fx.image_dir, "Directory for synthetic images");
  fx_cmd->add_option("--image-width", fx.image_width, "Synthetic image width");
  fx_cmd->add_option("--image-height", fx.image_height, "Synthetic image height");

  // inspect-weights
  std::filesystem::path inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect-weights", "List tensors, shapes and config");
  inspect_cmd->add_option("bundle", inspect_path, "Weight bundle")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << error_line("usage_error", e.what()) << '\n';
    return kExitUsage;
  }

  try {
    if (*tag_cmd) {
      if (no_dmar) tag.dmar = false;
      if (no_cwr) tag.cwr = false;
      if (!psi.empty()) {
        try {
          tag.psi = parse_layer_list(psi);
        } catch (const std::exception&) {
          fail(ErrorKind::kUsage, "--psi expects comma-separated layer numbers");
        }
      }
      if (!resolution.empty()) {
        tag.resolution = resolution == "224" ? ResolutionMode::kSquare : ResolutionMode::kOriginal;
      }
      if (!mask_scope.empty()) {
        tag.mask_scope = mask_scope == "last" ? MaskScope::kLastLayer : MaskScope::kAllLayers;
      }
      if (tag.inputs.empty() && !tag.input_list) {
        fail(ErrorKind::kUsage, "no input images given");
      }
      return cmd_tag(tag);
    }
    if (*eval_cmd) return cmd_eval(ev);
    if (*fx_cmd) return cmd_gen_fixture(fx);
    if (*inspect_cmd) return cmd_inspect_weights(inspect_path);
  } catch (const Error& e) {
    std::cerr << error_line(error_kind_name(e.kind()), e.what()) << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << error_line("internal_error", e.what()) << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}
