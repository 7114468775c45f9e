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


#ifndef TAGCLIP_TESTS_TEST_SUPPORT_HPP_
#define TAGCLIP_TESTS_TEST_SUPPORT_HPP_

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <unordered_map>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tagclip/bundle.hpp"
#include "tagclip/numeric.hpp"
#include "tagclip/tokenizer.hpp"

namespace testing_support {

// A scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "tagclip-test-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline tagclip::ModelConfig small_config() { return tagclip::ModelConfig{}; }

// Writes a fixture bundle into `dir` and loads it back.
inline tagclip::WeightBundle make_fixture(const TempDir& dir, uint64_t seed = 7,
                                          tagclip::ModelConfig cfg = small_config(),
                                          const std::string& name = "fixture.tcb") {
  const auto path = dir / name;
  tagclip::generate_fixture(cfg, seed, path);
  return tagclip::load_bundle(path);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline tagclip::Matrix random_matrix(std::mt19937& rng, std::size_t r, std::size_t c,
                                     float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  tagclip::Matrix m(r, c);
  for (auto& v : m.data()) v = d(rng);
  return m;
}

// Row-stochastic random matrix, like a softmax attention map.
inline tagclip::Matrix random_stochastic(std::mt19937& rng, std::size_t n) {
  std::uniform_real_distribution<float> d(0.01f, 1.0f);
  tagclip::Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    float s = 0.0f;
    for (std::size_t j = 0; j < n; ++j) s += (m(i, j) = d(rng));
    for (std::size_t j = 0; j < n; ++j) m(i, j) /= s;
  }
  return m;
}

inline std::vector<std::vector<double>> to_rows(const tagclip::Matrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

using RankMap = std::map<std::pair<std::string, std::string>, int>;

inline std::vector<std::string> word_units(const std::string& word) {
  std::vector<std::string> units;
  for (char c : word) units.emplace_back(1, c);
  units.back() += "</w>";
  return units;
}

// A vocabulary over a small alphabet whose merges are sampled from random
// words, so several merges compete inside one word and their order matters.
struct RandomMergeVocab {
  tagclip::BpeVocab vocab;
  RankMap ranks;
};

inline RandomMergeVocab random_merge_vocab(uint32_t seed) {
  std::mt19937 rng(seed);
  const std::string alphabet = "abcde";
  std::uniform_int_distribution<int> letter(0, 4), len(1, 8);
  std::unordered_map<std::string, int32_t> encoder;
  int32_t next = 0;
  for (const auto& u : tagclip::byte_unicode_table()) encoder.emplace(u, next++);
  for (const auto& u : tagclip::byte_unicode_table()) encoder.emplace(u + "</w>", next++);
  std::vector<tagclip::BpeVocab::Merge> merges;
  RankMap ranks;
  for (int attempt = 0; attempt < 400 && merges.size() < 60; ++attempt) {
    std::string w;
    for (int i = len(rng); i > 0; --i) w += alphabet[letter(rng)];
    const auto units = oracle::bpe(word_units(w), ranks);
    if (units.size() < 2) continue;
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, units.size() - 2)(rng);
    const tagclip::BpeVocab::Merge m{units[k], units[k + 1]};
    if (ranks.contains(m)) continue;
    ranks.emplace(m, static_cast<int>(merges.size()));
    merges.push_back(m);
    encoder.emplace(m.first + m.second, next++);
  }
  encoder.emplace("<|startoftext|>", next++);
  encoder.emplace("<|endoftext|>", next++);
  return {tagclip::BpeVocab(std::move(encoder), std::move(merges)), std::move(ranks)};
}

}  // namespace testing_support

#endif  // TAGCLIP_TESTS_TEST_SUPPORT_HPP_
