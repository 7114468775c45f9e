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


#include <gtest/gtest.h>

#include <map>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tagclip/bundle.hpp"
#include "tagclip/tokenizer.hpp"
#include "test_support.hpp"

namespace {

using tagclip::BpeVocab;
using testing_support::random_merge_vocab;
using testing_support::word_units;

TEST(Tokenizer, EmptyStringIsFramedAndPadded) {
  const BpeVocab vocab = tagclip::make_toy_vocab(tagclip::fixture_words());
  const auto seq = tagclip::tokenize("", vocab, 8);
  ASSERT_EQ(seq.ids.size(), 8u);
  EXPECT_EQ(seq.ids[0], vocab.sot_id());
  EXPECT_EQ(seq.ids[1], vocab.eot_id());
  EXPECT_EQ(seq.eot_index, 1u);
  for (std::size_t i = 2; i < 8; ++i) EXPECT_EQ(seq.ids[i], vocab.pad_id());
  EXPECT_EQ(vocab.pad_id(), 0);
}

TEST(Tokenizer, KnownWordsBecomeSingleTokens) {
  const BpeVocab vocab = tagclip::make_toy_vocab(tagclip::fixture_words());
  const auto ids = vocab.encode("A photo of the cat.");
  const std::vector<int32_t> want{vocab.id_of("a</w>"), vocab.id_of("photo</w>"),
                                  vocab.id_of("of</w>"), vocab.id_of("the</w>"),
                                  vocab.id_of("cat</w>"), vocab.id_of(".</w>")};
  EXPECT_EQ(ids, want);
}

TEST(Tokenizer, ToyVocabLayout) {
  const BpeVocab vocab = tagclip::make_toy_vocab(tagclip::fixture_words());
  EXPECT_EQ(vocab.id_of("!"), 0);
  EXPECT_EQ(vocab.id_of("!</w>"), 256);
  EXPECT_EQ(vocab.eot_id(), static_cast<int32_t>(vocab.size()) - 1);
  EXPECT_EQ(vocab.sot_id(), static_cast<int32_t>(vocab.size()) - 2);
}

TEST(Tokenizer, MergesFollowRankOrderOnRandomStrings) {
  const auto rv = random_merge_vocab(2024);
  ASSERT_GE(rv.vocab.merges().size(), 30u);
  std::mt19937 rng(99);
  std::uniform_int_distribution<int> len(0, 24), pick(0, 6);
  const std::string chars = "abcde  ";
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    for (int i = len(rng); i > 0; --i) text += chars[pick(rng)];
    std::vector<int32_t> want;
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      for (const auto& u : oracle::bpe(word_units(word), rv.ranks)) want.push_back(rv.vocab.id_of(u));
      word.clear();
    };
    for (char c : text) {
      if (c == ' ') {
        flush();
      } else {
        word += c;
      }
    }
    flush();
    EXPECT_EQ(rv.vocab.encode(text), want) << "text='" << text << "'";

    const auto seq = tagclip::tokenize(text, rv.vocab, 12);
    ASSERT_EQ(seq.ids.size(), 12u);
    EXPECT_EQ(seq.ids[0], rv.vocab.sot_id());
    EXPECT_EQ(seq.ids[seq.eot_index], rv.vocab.eot_id());
    const std::size_t body = std::min<std::size_t>(want.size(), 10);
    EXPECT_EQ(seq.eot_index, body + 1);
    for (std::size_t i = 0; i < body; ++i) EXPECT_EQ(seq.ids[i + 1], want[i]);
    for (std::size_t i = seq.eot_index + 1; i < 12; ++i) EXPECT_EQ(seq.ids[i], 0);
    for (int32_t id : seq.ids) EXPECT_LT(id, static_cast<int32_t>(rv.vocab.size()));
  }
}

TEST(Tokenizer, TruncationKeepsTerminalEot) {
  const BpeVocab vocab = tagclip::make_toy_vocab(tagclip::fixture_words());
  const auto seq = tagclip::tokenize("cat dog bird car person sky tree road grass", vocab, 6);
  ASSERT_EQ(seq.ids.size(), 6u);
  EXPECT_EQ(seq.eot_index, 5u);
  EXPECT_EQ(seq.ids[5], vocab.eot_id());
  EXPECT_EQ(seq.ids[1], vocab.id_of("cat</w>"));
  EXPECT_EQ(seq.ids[4], vocab.id_of("car</w>"));
}

TEST(Tokenizer, ContextBelowTwoIsRejected) {
  const BpeVocab vocab = tagclip::make_toy_vocab({});
  EXPECT_THROW(tagclip::tokenize("x", vocab, 1), tagclip::Error);
}

TEST(Pretokenize, SplitsLettersDigitsAndContractions) {
  const std::vector<std::string> want{"it", "'s", "4", "2", "!!", "ok"};
  EXPECT_EQ(tagclip::pretokenize("it's 42!! ok"), want);
  const std::vector<std::string> specials{"<|startoftext|>", "hi", "<|endoftext|>"};
  EXPECT_EQ(tagclip::pretokenize("<|startoftext|>hi<|endoftext|>"), specials);
}

TEST(CleanText, LowercasesUnicodeAndCollapsesWhitespace) {
  EXPECT_EQ(tagclip::clean_text("  H\xC3\x89LLO \t\n World  "), "h\xC3\xA9llo world");
  const std::vector<std::string> want{"h\xC3\xA9llo", "world"};
  EXPECT_EQ(tagclip::pretokenize(tagclip::clean_text("H\xC3\x89LLO   World")), want);
}

TEST(Tokenizer, NonAsciiFallsBackToByteUnits) {
  const BpeVocab vocab = tagclip::make_toy_vocab({});
  const auto ids = vocab.encode("\xC3\xA9");  // e-acute, two UTF-8 bytes
  ASSERT_EQ(ids.size(), 2u);
  const auto& table = tagclip::byte_unicode_table();
  EXPECT_EQ(ids[0], vocab.id_of(table[0xC3]));
  EXPECT_EQ(ids[1], vocab.id_of(table[0xA9] + "</w>"));
}

TEST(ByteTable, IsABijectionOntoDistinctStrings) {
  std::set<std::string> seen(tagclip::byte_unicode_table().begin(),
                             tagclip::byte_unicode_table().end());
  EXPECT_EQ(seen.size(), 256u);
  EXPECT_EQ(tagclip::byte_unicode_table()['a'], "a");
  EXPECT_EQ(tagclip::byte_unicode_table()[' '], "\xC4\xA0");  // U+0120
}

TEST(VocabFiles, RoundTripPreservesEncoding) {
  testing_support::TempDir dir;
  const auto rv = random_merge_vocab(7);
  rv.vocab.write_files(dir / "v.vocab.json", dir / "v.merges.txt");
  const std::string merges = testing_support::slurp(dir / "v.merges.txt");
  EXPECT_EQ(merges.rfind("#version", 0), 0u);
  const BpeVocab back = BpeVocab::from_files(dir / "v.vocab.json", dir / "v.merges.txt");
  EXPECT_EQ(back.size(), rv.vocab.size());
  EXPECT_EQ(back.merges(), rv.vocab.merges());
  EXPECT_EQ(back.encoder(), rv.vocab.encoder());
  EXPECT_EQ(back.encode("abcde edcba aabbcc"), rv.vocab.encode("abcde edcba aabbcc"));
}

TEST(VocabFiles, RejectsBrokenVocabularies) {
  testing_support::TempDir dir;
  const BpeVocab vocab = tagclip::make_toy_vocab({"cat"});
  vocab.write_files(dir / "v.vocab.json", dir / "v.merges.txt");
  {
    std::ofstream(dir / "bad.merges.txt") << "#version: 0.2\nc a t\n";
    try {
      BpeVocab::from_files(dir / "v.vocab.json", dir / "bad.merges.txt");
      FAIL();
    } catch (const tagclip::Error& e) {
      EXPECT_EQ(e.kind(), tagclip::ErrorKind::kParse);
    }
  }
  {
    std::ofstream(dir / "bad2.merges.txt") << "#version: 0.2\nq z</w>\n";
    try {
      BpeVocab::from_files(dir / "v.vocab.json", dir / "bad2.merges.txt");
      FAIL();
    } catch (const tagclip::Error& e) {
      EXPECT_EQ(e.kind(), tagclip::ErrorKind::kSchema);
    }
  }
  std::unordered_map<std::string, int32_t> missing_specials;
  int32_t next = 0;
  for (const auto& u : tagclip::byte_unicode_table()) missing_specials.emplace(u, next++);
  for (const auto& u : tagclip::byte_unicode_table()) missing_specials.emplace(u + "</w>", next++);
  EXPECT_THROW(BpeVocab(missing_specials, {}), tagclip::Error);
}

}  // namespace
