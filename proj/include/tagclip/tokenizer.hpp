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

// Byte-level BPE tokenizer compatible with the released contrastive
// text encoder: whitespace collapsing, Unicode lowercasing, a fixed
// pre-tokenization pattern, byte-to-unicode mapping, end-of-word marked
// merges, and start/end-of-text framing.

#ifndef TAGCLIP_TOKENIZER_HPP_
#define TAGCLIP_TOKENIZER_HPP_

#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tagclip/errors.hpp"

namespace tagclip {

inline constexpr std::string_view kStartOfText = "<|startoftext|>";
inline constexpr std::string_view kEndOfText = "<|endoftext|>";
inline constexpr std::string_view kEndOfWord = "</w>";

namespace detail {

inline std::string utf8_encode(UChar32 cp) {
  std::string out;
  char buf[4];
  int32_t len = 0;
  UBool error = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, 4, cp, error);
  if (!error) out.assign(buf, static_cast<std::size_t>(len));
  return out;
}

struct CodePoint {
  UChar32 value;
  std::size_t begin;  // byte offset
  std::size_t end;
};

inline std::vector<CodePoint> decode_utf8(std::string_view s) {
  std::vector<CodePoint> out;
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const auto n = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < n) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(p, i, n, c);
    out.push_back({c, static_cast<std::size_t>(start),
                   static_cast<std::size_t>(i)});
  }
  return out;
}

inline bool is_space(UChar32 c) {
  return c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r' ||
         (c >= 0x1c && c <= 0x1f) || u_isUWhiteSpace(c);
}
inline bool is_letter(UChar32 c) {
  return c >= 0 && (U_GET_GC_MASK(c) & U_GC_L_MASK) != 0;
}
inline bool is_number(UChar32 c) {
  return c >= 0 && (U_GET_GC_MASK(c) & U_GC_N_MASK) != 0;
}

}  // namespace detail

// The 256-entry reversible byte -> printable code point table.
inline const std::array<std::string, 256>& byte_unicode_table() {
  static const std::array<std::string, 256> table = [] {
    std::array<std::string, 256> t;
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const UChar32 cp = direct[b] ? b : 256 + extra++;
      t[b] = detail::utf8_encode(cp);
    }
    return t;
  }();
  return table;
}

// Lowercases and collapses every whitespace run to one space, trimming ends.
inline std::string clean_text(std::string_view text) {
  std::string lowered;
  icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(),
                                                static_cast<int32_t>(text.size())))
      .toLower(icu::Locale::getRoot())
      .toUTF8String(lowered);
  std::string out;
  bool pending_space = false;
  for (const auto& cp : detail::decode_utf8(lowered)) {
    if (detail::is_space(cp.value)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.append(lowered, cp.begin, cp.end - cp.begin);
  }
  return out;
}

// Splits cleaned text with the pattern
//   <|startoftext|>|<|endoftext|>|'s|'t|'re|'ve|'m|'ll|'d|\p{L}+|\p{N}|[^\s\p{L}\p{N}]+
// evaluated leftmost-first at each match start.
inline std::vector<std::string> pretokenize(std::string_view text) {
  std::vector<std::string> pieces;
  const auto cps = detail::decode_utf8(text);
  std::size_t i = 0;
  auto piece = [&](std::size_t from, std::size_t to) {
    pieces.emplace_back(text.substr(cps[from].begin, cps[to - 1].end - cps[from].begin));
  };
  while (i < cps.size()) {
    const std::string_view rest = text.substr(cps[i].begin);
    if (rest.starts_with(kStartOfText) || rest.starts_with(kEndOfText)) {
      const std::size_t len = rest.starts_with(kStartOfText) ? kStartOfText.size()
                                                             : kEndOfText.size();
      pieces.emplace_back(rest.substr(0, len));
      i += len;  // specials are pure ASCII
      continue;
    }
    const UChar32 c = cps[i].value;
    if (c == '\'') {
      bool matched = false;
      for (std::string_view suffix : {"s", "t", "re", "ve", "m", "ll", "d"}) {
        if (rest.substr(1).starts_with(suffix)) {
          pieces.emplace_back(rest.substr(0, 1 + suffix.size()));
          i += 1 + suffix.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (detail::is_letter(c)) {
      std::size_t j = i + 1;
      while (j < cps.size() && detail::is_letter(cps[j].value)) ++j;
      piece(i, j);
      i = j;
    } else if (detail::is_number(c)) {
      piece(i, i + 1);
      ++i;
    } else if (detail::is_space(c)) {
      ++i;
    } else {
      std::size_t j = i + 1;
      while (j < cps.size() && !detail::is_space(cps[j].value) &&
             !detail::is_letter(cps[j].value) && !detail::is_number(cps[j].value)) {
        ++j;
      }
      piece(i, j);
      i = j;
    }
  }
  return pieces;
}

struct TokenSequence {
  std::vector<int32_t> ids;
  std::size_t eot_index = 0;

  bool operator==(const TokenSequence&) const = default;
};

// Token table plus the ordered merge list.
class BpeVocab {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeVocab() = default;
  BpeVocab(std::unordered_map<std::string, int32_t> encoder,
           std::vector<Merge> merges)
      : encoder_(std::move(encoder)), merges_(std::move(merges)) {
    validate_and_index();
  }

  static BpeVocab from_files(const std::filesystem::path& vocab_json,
                             const std::filesystem::path& merges_txt) {
    std::ifstream vin(vocab_json);
    if (!vin) fail(ErrorKind::kIo, "cannot open vocabulary " + vocab_json.string());
    nlohmann::json j;
    try {
      vin >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, "vocabulary " + vocab_json.string() + ": " + e.what());
    }
    if (!j.is_object()) fail(ErrorKind::kParse, "vocabulary must be a JSON object");
    std::unordered_map<std::string, int32_t> encoder;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!it.value().is_number_integer()) {
        fail(ErrorKind::kParse, "vocabulary id for '" + it.key() + "' is not an integer");
      }
      encoder.emplace(it.key(), it.value().get<int32_t>());
    }
    std::ifstream min(merges_txt);
    if (!min) fail(ErrorKind::kIo, "cannot open merges " + merges_txt.string());
    std::vector<Merge> merges;
    std::string line;
    while (std::getline(min, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.starts_with("#version")) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
        fail(ErrorKind::kParse, "malformed merge line: " + line);
      }
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return BpeVocab(std::move(encoder), std::move(merges));
  }

  void write_files(const std::filesystem::path& vocab_json,
                   const std::filesystem::path& merges_txt) const {
    // Emit in id order so the files are byte-stable.
    std::vector<const std::string*> by_id(encoder_.size());
    for (const auto& [tok, id] : encoder_) by_id[static_cast<std::size_t>(id)] = &tok;
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t id = 0; id < by_id.size(); ++id) j[*by_id[id]] = id;
    std::ofstream vout(vocab_json, std::ios::binary);
    if (!vout) fail(ErrorKind::kIo, "cannot write " + vocab_json.string());
    vout << j.dump() << '\n';
    std::ofstream mout(merges_txt, std::ios::binary);
    if (!mout) fail(ErrorKind::kIo, "cannot write " + merges_txt.string());
    mout << "#version: 0.2\n";
    for (const auto& [a, b] : merges_) mout << a << ' ' << b << '\n';
    if (!vout || !mout) fail(ErrorKind::kIo, "short write on vocabulary files");
  }

  std::size_t size() const noexcept { return encoder_.size(); }
  int32_t sot_id() const noexcept { return sot_id_; }
  int32_t eot_id() const noexcept { return eot_id_; }
  int32_t pad_id() const noexcept { return 0; }
  const std::vector<Merge>& merges() const noexcept { return merges_; }
  const std::unordered_map<std::string, int32_t>& encoder() const noexcept {
    return encoder_;
  }

  int32_t id_of(const std::string& token) const {
    const auto it = encoder_.find(token);
    if (it == encoder_.end()) fail(ErrorKind::kLookup, "token not in vocabulary: " + token);
    return it->second;
  }

  // Rank of merging (left, right), or -1 if the pair is not a merge.
  int merge_rank(const std::string& left, const std::string& right) const {
    std::string key;
    key.reserve(left.size() + right.size() + 1);
    key.append(left).push_back(' ');
    key.append(right);
    const auto it = ranks_.find(key);
    return it == ranks_.end() ? -1 : it->second;
  }

  // BPE units of one pre-tokenized, byte-mapped word.
  std::vector<std::string> bpe(const std::string& mapped_word) const {
    std::vector<std::string> units;
    for (const auto& cp : detail::decode_utf8(mapped_word)) {
      units.push_back(mapped_word.substr(cp.begin, cp.end - cp.begin));
    }
    if (units.empty()) return units;
    units.back().append(kEndOfWord);
    while (units.size() > 1) {
      int best = std::numeric_limits<int>::max();
      std::size_t best_at = 0;
      for (std::size_t k = 0; k + 1 < units.size(); ++k) {
        const int r = merge_rank(units[k], units[k + 1]);
        if (r >= 0 && r < best) {
          best = r;
          best_at = k;
        }
      }
      if (best == std::numeric_limits<int>::max()) break;
      const std::string left = units[best_at];
      const std::string right = units[best_at + 1];
      std::vector<std::string> next;
      next.reserve(units.size());
      for (std::size_t k = 0; k < units.size();) {
        if (k + 1 < units.size() && units[k] == left && units[k + 1] == right) {
          next.push_back(left + right);
          k += 2;
        } else {
          next.push_back(std::move(units[k]));
          ++k;
        }
      }
      units = std::move(next);
    }
    return units;
  }

  // Token ids for the body of `text` (no start/end framing).
  std::vector<int32_t> encode(std::string_view text) const {
    std::vector<int32_t> ids;
    const auto& table = byte_unicode_table();
    for (const auto& word : pretokenize(clean_text(text))) {
      if (word == kStartOfText || word == kEndOfText) {
        ids.push_back(id_of(word));
        continue;
      }
      std::string mapped;
      for (unsigned char b : word) mapped += table[b];
      for (const auto& unit : bpe(mapped)) ids.push_back(id_of(unit));
    }
    return ids;
  }

 private:
  void validate_and_index() {
    std::vector<bool> seen(encoder_.size(), false);
    for (const auto& [tok, id] : encoder_) {
      if (id < 0 || static_cast<std::size_t>(id) >= encoder_.size() ||
          seen[static_cast<std::size_t>(id)]) {
        fail(ErrorKind::kSchema, "vocabulary ids must be a permutation of 0..n-1 ('" +
                                     tok + "' -> " + std::to_string(id) + ")");
      }
      seen[static_cast<std::size_t>(id)] = true;
    }
    for (const auto& unit : byte_unicode_table()) {
      if (!encoder_.contains(unit) || !encoder_.contains(unit + std::string(kEndOfWord))) {
        fail(ErrorKind::kSchema, "vocabulary lacks byte-level unit '" + unit + "'");
      }
    }
    sot_id_ = id_of(std::string(kStartOfText));
    eot_id_ = id_of(std::string(kEndOfText));
    ranks_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto& [a, b] = merges_[r];
      if (!encoder_.contains(a + b)) {
        fail(ErrorKind::kSchema, "merge result '" + a + b + "' missing from vocabulary");
      }
      ranks_.emplace(a + " " + b, static_cast<int>(r));  // first occurrence wins
    }
  }

  std::unordered_map<std::string, int32_t> encoder_;
  std::vector<Merge> merges_;
  std::unordered_map<std::string, int> ranks_;
  int32_t sot_id_ = -1;
  int32_t eot_id_ = -1;
};

// [SOT, body..., EOT, pad...] of exactly context_length ids. Bodies longer than
// context_length - 2 are truncated so the terminal EOT survives.
inline TokenSequence tokenize(std::string_view text, const BpeVocab& vocab,
                              std::size_t context_length) {
  if (context_length < 2) fail(ErrorKind::kConfig, "context_length must be >= 2");
  auto body = vocab.encode(text);
  if (body.size() > context_length - 2) body.resize(context_length - 2);
  TokenSequence seq;
  seq.ids.assign(context_length, vocab.pad_id());
  seq.ids[0] = vocab.sot_id();
  std::copy(body.begin(), body.end(), seq.ids.begin() + 1);
  seq.eot_index = body.size() + 1;
  seq.ids[seq.eot_index] = vocab.eot_id();
  return seq;
}

// Toy vocabulary: every byte unit, every end-of-word unit, then the merges
// that spell out each of `words` left to right, then the two specials.
inline BpeVocab make_toy_vocab(const std::vector<std::string>& words) {
  const auto& table = byte_unicode_table();
  std::unordered_map<std::string, int32_t> encoder;
  // Printable bytes first, then the remapped ones, as in released vocabularies.
  std::vector<std::string> units;
  for (int pass = 0; pass < 2; ++pass) {
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || b >= 0xAE;
      if (printable == (pass == 0)) units.push_back(table[b]);
    }
  }
  int32_t next = 0;
  for (const auto& u : units) encoder.emplace(u, next++);
  for (const auto& u : units) encoder.emplace(u + std::string(kEndOfWord), next++);
  std::vector<BpeVocab::Merge> merges;
  for (const auto& word : words) {
    std::vector<std::string> parts;
    for (unsigned char b : word) parts.push_back(table[b]);
    if (parts.size() < 2) continue;
    parts.back().append(kEndOfWord);
    std::string acc = parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) {
      if (encoder.emplace(acc + parts[k], next).second) {
        ++next;
        merges.emplace_back(acc, parts[k]);
      }
      acc += parts[k];
    }
  }
  encoder.emplace(std::string(kStartOfText), next++);
  encoder.emplace(std::string(kEndOfText), next++);
  return BpeVocab(std::move(encoder), std::move(merges));
}

}  // namespace tagclip

#endif  // TAGCLIP_TOKENIZER_HPP_
