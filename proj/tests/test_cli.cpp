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

#include <sstream>

#include "tagclip/cli.hpp"
#include "test_support.hpp"

namespace {

using namespace tagclip;
using namespace tagclip::cli;
using testing_support::TempDir;

const std::filesystem::path kSource = TAGCLIP_SOURCE_DIR;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    FixtureOptions fx;
    fx.out = dir_ / "fixture.tcb";
    fx.seed = 11;
    fx.images = 4;
    std::ostringstream log;
    ASSERT_EQ(cmd_gen_fixture(fx, log), kExitOk);
  }

  TagManifest manifest() const {
    TagManifest m;
    m.bundle = dir_ / "fixture.tcb";
    m.classes = kSource / "configs" / "fixture_classes.json";
    m.inputs = {(dir_ / "images" / "*.png").string()};
    m.out = dir_ / "labels.jsonl";
    return m;
  }

  TempDir dir_;
};

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(exit_code_for(ErrorKind::kUsage), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::kConfig), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::kParse), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::kSchema), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::kData), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::kInput), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::kIo), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::kShape), 5);
}

TEST(ErrorLine, IsASingleLine) {
  EXPECT_EQ(error_line("io_error", "cannot open\nfile"), "tagclip: error[io_error]: cannot open file");
}

TEST_F(CliTest, TagWritesOneSortedRowPerImage) {
  std::ostringstream log;
  ASSERT_EQ(cmd_tag(manifest(), log), kExitOk);
  const auto classes = ClassSet::load(manifest().classes).foreground_names();
  const auto table = read_pseudo_labels(dir_ / "labels.jsonl", classes);
  ASSERT_EQ(table.rows.size(), 4u);
  EXPECT_EQ(table.rows.begin()->first, "img_000");
  for (const auto& [id, row] : table.rows) {
    EXPECT_EQ(row.scores.size(), classes.size());
    EXPECT_FALSE(row.positives.empty()) << id;
  }
  EXPECT_NE(log.str().find("tagged 4 image(s), skipped 0"), std::string::npos) << log.str();
}

TEST_F(CliTest, WorkerCountDoesNotChangeOutput) {
  auto m = manifest();
  std::ostringstream log;
  ASSERT_EQ(cmd_tag(m, log), kExitOk);
  const auto one = testing_support::slurp(*m.out);
  m.workers = 3;
  m.out = dir_ / "labels3.jsonl";
  ASSERT_EQ(cmd_tag(m, log), kExitOk);
  EXPECT_EQ(testing_support::slurp(*m.out), one);
}

TEST_F(CliTest, CacheReuseGivesSameOutput) {
  auto m = manifest();
  m.cache_dir = dir_ / "cache";
  std::filesystem::create_directories(*m.cache_dir);
  std::ostringstream log;
  ASSERT_EQ(cmd_tag(m, log), kExitOk);
  const auto first = testing_support::slurp(*m.out);
  ASSERT_FALSE(std::filesystem::is_empty(*m.cache_dir));
  ASSERT_EQ(cmd_tag(m, log), kExitOk);
  EXPECT_EQ(testing_support::slurp(*m.out), first);
}

TEST_F(CliTest, CorruptImageIsSkippedButOthersAreTagged) {
  std::ofstream(dir_ / "images" / "broken.png") << "not a png";
  std::ostringstream log;
  ASSERT_EQ(cmd_tag(manifest(), log), kExitOk);
  EXPECT_NE(log.str().find("skipped " + (dir_ / "images" / "broken.png").string()), std::string::npos);
  EXPECT_NE(log.str().find("tagged 4 image(s), skipped 1"), std::string::npos);
}

TEST_F(CliTest, DuplicateImageIdsAreADataError) {
  std::filesystem::create_directories(dir_ / "other");
  std::filesystem::copy_file(dir_ / "images" / "img_000.png", dir_ / "other" / "img_000.png");
  auto m = manifest();
  m.inputs.push_back((dir_ / "other" / "img_000.png").string());
  std::ostringstream log;
  try {
    cmd_tag(m, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_EQ(exit_code_for(e.kind()), kExitData);
  }
}

TEST_F(CliTest, MissingBundleIsAnIoError) {
  auto m = manifest();
  m.bundle = dir_ / "absent.tcb";
  std::ostringstream log;
  try {
    cmd_tag(m, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(exit_code_for(e.kind()), kExitIo);
  }
}

TEST_F(CliTest, NoMatchingInputsIsAUsageError) {
  auto m = manifest();
  m.inputs = {(dir_ / "nothing" / "*.jpg").string()};
  std::ostringstream log;
  try {
    cmd_tag(m, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(exit_code_for(e.kind()), kExitUsage);
  }
}

TEST_F(CliTest, InvalidConfigIsAUsageError) {
  auto m = manifest();
  m.psi = {9};
  std::ostringstream log;
  try {
    cmd_tag(m, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST_F(CliTest, EvalReportRoundTrips) {
  std::ostringstream log;
  ASSERT_EQ(cmd_tag(manifest(), log), kExitOk);
  nlohmann::json gt;
  gt["img_000"] = {"cat"};
  gt["img_001"] = {"dog", "cat"};
  gt["img_002"] = nlohmann::json::array();
  gt["img_003"] = {"car"};
  std::ofstream(dir_ / "gt.json") << gt.dump();

  EvalOptions o;
  o.predictions = dir_ / "labels.jsonl";
  o.classes = kSource / "configs" / "fixture_classes.json";
  o.gt_json = dir_ / "gt.json";
  o.out = dir_ / "report.json";
  std::ostringstream out, warn;
  ASSERT_EQ(cmd_eval(o, out, warn), kExitOk);
  EXPECT_NE(out.str().find("over 3 classes, 4 images"), std::string::npos) << out.str();
  EXPECT_NE(warn.str().find("class 'bird' has no positives"), std::string::npos);

  const auto report = MapReport::from_json(read_json_file(*o.out));
  EXPECT_EQ(report.images, 4u);
  EXPECT_EQ(report.evaluated_classes, 3u);
  EXPECT_EQ(report.to_json().dump(2) + "\n", testing_support::slurp(*o.out));
}

TEST_F(CliTest, EvalNeedsExactlyOneGroundTruthSource) {
  EvalOptions o;
  o.predictions = dir_ / "labels.jsonl";
  o.classes = kSource / "configs" / "fixture_classes.json";
  std::ostringstream out, log;
  try {
    cmd_eval(o, out, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
  }
}

TEST_F(CliTest, InspectListsEveryTensor) {
  std::ostringstream out;
  ASSERT_EQ(cmd_inspect_weights(dir_ / "fixture.tcb", out), kExitOk);
  const auto file = TensorFile::read(dir_ / "fixture.tcb");
  std::size_t rows = 0;
  std::istringstream lines(out.str());
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty() && line[0] != '#') ++rows;
  }
  EXPECT_EQ(rows, file.records().size());
  EXPECT_NE(out.str().find("image.proj\tF32\t[8,8]"), std::string::npos) << out.str();
}

TEST_F(CliTest, InspectRejectsTruncatedBundle) {
  const auto bytes = testing_support::slurp(dir_ / "fixture.tcb");
  std::ofstream(dir_ / "cut.tcb", std::ios::binary) << bytes.substr(0, 6);
  std::ostringstream out;
  try {
    cmd_inspect_weights(dir_ / "cut.tcb", out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_EQ(exit_code_for(e.kind()), kExitData);
  }
}

TEST_F(CliTest, FixtureIntoMissingDirectoryIsAnIoError) {
  FixtureOptions fx;
  fx.out = dir_ / "no" / "such" / "dir" / "f.tcb";
  std::ostringstream log;
  try {
    cmd_gen_fixture(fx, log);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

}  // namespace
