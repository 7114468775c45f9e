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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tagclip/image_io.hpp"
#include "tagclip/vision_encoder.hpp"
#include "test_support.hpp"

namespace {

using tagclip::ImageTensor;
using tagclip::Matrix;
using tagclip::PatchMask;
using tagclip::RgbImage;
using tagclip::VisionModel;

RgbImage pattern_image(std::size_t h, std::size_t w) {
  RgbImage img{w, h, std::vector<uint8_t>(w * h * 3)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<uint8_t>((y * 31 + x * 17 + c * 53) % 256);
  return img;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

// From tests/reference/forward_reference.py, seed-7 fixture.
struct Golden {
  std::size_t h, w;
  std::vector<float> global, dense_first, dense_last, attn_row0;
};

const std::vector<Golden>& goldens() {
  static const std::vector<Golden> g = {
      {16, 16,
       {-0.3996038f, 0.6312275f, 0.2515145f, -0.2337085f, 0.159906f, 0.4649762f, -0.9098686f, 0.0631072f},
       {0.4017976f, 0.7645432f, -0.5477578f, -0.7016687f, -0.3278318f, 0.4475552f, 0.1799527f, -0.9560104f},
       {-0.2944646f, -1.003755f, -0.4537417f, 0.3121726f, 0.4685699f, -0.7981886f, 0.7512708f, 0.2331449f},
       {0.05447396f, 0.03006135f, 0.08288162f, 0.06604075f, 0.09082759f, 0.06761878f, 0.05670586f,
        0.02934952f, 0.05049315f, 0.03119749f, 0.08859039f, 0.06441413f, 0.08105138f, 0.05571951f,
        0.05403622f, 0.03136825f}},
      {12, 20,
       {-0.427888f, 0.5621376f, 0.3064973f, -0.137538f, 0.2014356f, 0.4819083f, -0.9469684f, 0.07316662f},
       {0.3758746f, 0.7379514f, -0.572884f, -0.6922701f, -0.2939127f, 0.4467725f, 0.2109645f, -0.9312801f},
       {0.2339632f, 0.1641142f, -0.5785005f, -0.3759007f, 0.022342f, -0.2678547f, 0.183724f, -0.7602116f},
       {0.055657f, 0.03136563f, 0.08746734f, 0.06686074f, 0.04885276f, 0.09770816f, 0.07017097f,
        0.05397635f, 0.03065917f, 0.08298751f, 0.05571309f, 0.03215542f, 0.09683275f, 0.07078162f,
        0.0507955f}},
  };
  return g;
}

class VisionTest : public ::testing::Test {
 protected:
  testing_support::TempDir dir_;
  tagclip::WeightBundle bundle_ = testing_support::make_fixture(dir_);
  VisionModel model_{bundle_};

  ImageTensor tensor(std::size_t h, std::size_t w) const {
    return tagclip::preprocess(pattern_image(h, w), tagclip::ResolutionMode::kOriginal,
                               bundle_.config());
  }
};

TEST(Preprocess, CentreCropsToPatchMultiples) {
  tagclip::ModelConfig cfg;
  cfg.patch_size = 16;
  cfg.native_grid = 14;
  const auto t = tagclip::preprocess(pattern_image(375, 500), tagclip::ResolutionMode::kOriginal, cfg);
  EXPECT_EQ(t.width(), 496u);
  EXPECT_EQ(t.height(), 368u);
  EXPECT_EQ(t.grid_w, 31u);
  EXPECT_EQ(t.grid_h, 23u);
  EXPECT_EQ(t.origin_x, 2.0);
  EXPECT_EQ(t.origin_y, 3.0);
  const float want = (pattern_image(375, 500).at(3, 2, 1) / 255.0f - 0.5f) / 0.25f;
  EXPECT_FLOAT_EQ(t.pixels.at(0, 0, 1), want);
}

TEST(Preprocess, SquareModeUsesNativeResolution) {
  tagclip::ModelConfig cfg;
  cfg.patch_size = 16;
  cfg.native_grid = 14;
  const auto t = tagclip::preprocess(pattern_image(375, 500), tagclip::ResolutionMode::kSquare, cfg);
  EXPECT_EQ(t.width(), 224u);
  EXPECT_EQ(t.height(), 224u);
  EXPECT_EQ(t.grid_h, 14u);
  EXPECT_EQ(t.grid_w, 14u);
  EXPECT_DOUBLE_EQ(t.scale_x, 500.0 / 224.0);
  EXPECT_DOUBLE_EQ(t.scale_y, 375.0 / 224.0);
}

TEST(Preprocess, ImageSmallerThanAPatchIsRejected) {
  tagclip::ModelConfig cfg;
  try {
    tagclip::preprocess(pattern_image(3, 40), tagclip::ResolutionMode::kOriginal, cfg);
    FAIL();
  } catch (const tagclip::Error& e) {
    EXPECT_EQ(e.kind(), tagclip::ErrorKind::kInput);
  }
}

TEST(PosEmbed, NativeGridIsBitIdentical) {
  std::mt19937 rng(1);
  const Matrix pos = testing_support::random_matrix(rng, 17, 8);
  EXPECT_EQ(tagclip::interpolate_pos_embed(pos, 4, 4, 4), pos);
}

TEST(PosEmbed, ConstantGridStaysConstantAndClassRowIsKept) {
  Matrix pos(10, 2, 0.75f);
  pos(0, 0) = -3.0f;
  pos(0, 1) = 4.0f;
  const Matrix out = tagclip::interpolate_pos_embed(pos, 3, 5, 2);
  ASSERT_EQ(out.rows(), 11u);
  EXPECT_EQ(out(0, 0), -3.0f);
  EXPECT_EQ(out(0, 1), 4.0f);
  for (std::size_t r = 1; r < out.rows(); ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_FLOAT_EQ(out(r, c), 0.75f);
}

TEST(PosEmbed, RowCountMustMatchGrid) {
  EXPECT_THROW(tagclip::interpolate_pos_embed(Matrix(16, 2), 4, 4, 4), tagclip::Error);
}

TEST_F(VisionTest, MatchesReferenceEvaluation) {
  for (const auto& g : goldens()) {
    SCOPED_TRACE(std::to_string(g.h) + "x" + std::to_string(g.w));
    const auto img = tensor(g.h, g.w);
    const auto [global, stack] = tagclip::forward_standard(img, model_);
    const auto [dense, dense_stack] = tagclip::forward_dense(img, model_);
    EXPECT_LT(max_abs_diff(global.vector, g.global), 2e-5);
    EXPECT_LT(max_abs_diff(dense.features.row(0), g.dense_first), 2e-5);
    EXPECT_LT(max_abs_diff(dense.features.row(dense.features.rows() - 1), g.dense_last), 2e-5);
    EXPECT_LT(max_abs_diff(stack.layers.back().row(0), g.attn_row0), 2e-6);
    EXPECT_LT(max_abs_diff(dense_stack.layers.back().row(0), g.attn_row0), 2e-6);
    EXPECT_EQ(dense.grid_h * 4, g.h);
    EXPECT_EQ(dense.grid_w * 4, g.w);
  }
}

TEST_F(VisionTest, DenseEqualsStandardWithIdentityLastAttention) {
  for (const auto& [h, w] : {std::pair{16, 16}, std::pair{12, 20}, std::pair{28, 8}}) {
    const auto img = tensor(h, w);
    tagclip::ForwardTrace trace;
    tagclip::StandardForwardOptions opts;
    opts.identity_last_attention = true;
    opts.trace = &trace;
    model_.forward_standard(img, opts);
    const auto [dense, stack] = tagclip::forward_dense(img, model_);
    const auto patch_rows = trace.projected_tokens.data().subspan(trace.projected_tokens.cols());
    EXPECT_LT(max_abs_diff(dense.features.data(), patch_rows), 1e-5);
  }
}

TEST_F(VisionTest, DenseSharesEarlierLayersWithStandard) {
  const auto img = tensor(16, 12);
  tagclip::ForwardTrace st, dt;
  tagclip::StandardForwardOptions opts;
  opts.trace = &st;
  const auto [global, s_stack] = model_.forward_standard(img, opts);
  const auto [dense, d_stack] = model_.forward_dense(img, &dt);
  ASSERT_EQ(s_stack.depth(), 2u);
  ASSERT_EQ(d_stack.depth(), 2u);
  EXPECT_EQ(st.hidden[0], dt.hidden[0]);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(s_stack.layers[l], d_stack.layers[l]);
}

TEST_F(VisionTest, AttentionRowsAreDistributions) {
  const auto img = tensor(12, 20);
  tagclip::ForwardTrace trace;
  tagclip::StandardForwardOptions opts;
  opts.trace = &trace;
  const auto [global, stack] = model_.forward_standard(img, opts);
  EXPECT_EQ(stack.patches(), 15u);
  for (const auto& a : trace.full_attention) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const auto r = a.row(i);
      EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-6);
      for (float v : r) EXPECT_GE(v, 0.0f);
    }
  }
}

TEST_F(VisionTest, MaskedPatchesReceiveNoAttention) {
  const auto img = tensor(16, 16);
  PatchMask mask = PatchMask::all(16);
  for (std::size_t i : {0u, 5u, 6u, 15u}) mask.keep[i] = false;
  for (auto scope : {tagclip::MaskScope::kAllLayers, tagclip::MaskScope::kLastLayer}) {
    const auto [global, stack] = tagclip::forward_standard(img, model_, mask, scope);
    for (std::size_t l = 0; l < stack.depth(); ++l) {
      const bool masked_layer = scope == tagclip::MaskScope::kAllLayers || l + 1 == stack.depth();
      bool saw_nonzero = false;
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) {
          if (mask.keep[j]) continue;
          if (masked_layer) {
            EXPECT_EQ(stack.layers[l](i, j), 0.0f);
          } else {
            saw_nonzero = saw_nonzero || stack.layers[l](i, j) > 0.0f;
          }
        }
      if (!masked_layer) {
        EXPECT_TRUE(saw_nonzero);
      }
    }
  }
}

TEST_F(VisionTest, AllTrueMaskIsNeutral) {
  const auto img = tensor(12, 20);
  const auto [plain, plain_stack] = tagclip::forward_standard(img, model_);
  const auto [masked, masked_stack] = tagclip::forward_standard(img, model_, PatchMask::all(15));
  EXPECT_EQ(plain.vector, masked.vector);
  for (std::size_t l = 0; l < plain_stack.depth(); ++l) {
    EXPECT_EQ(plain_stack.layers[l], masked_stack.layers[l]);
  }
}

TEST_F(VisionTest, MaskingEverythingIsAPreconditionError) {
  const auto img = tensor(16, 16);
  try {
    tagclip::forward_standard(img, model_, PatchMask{std::vector<bool>(16, false)});
    FAIL();
  } catch (const tagclip::Error& e) {
    EXPECT_EQ(e.kind(), tagclip::ErrorKind::kPrecondition);
  }
  EXPECT_THROW(tagclip::forward_standard(img, model_, PatchMask::all(9)), tagclip::Error);
}

TEST_F(VisionTest, DenseForwardIsPatchPermutationEquivariant) {
  const Matrix tokens = model_.embed(tensor(16, 16));
  std::vector<std::size_t> perm(16);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937(4));
  Matrix shuffled = tokens;
  for (std::size_t i = 0; i < 16; ++i) {
    std::copy(tokens.row(perm[i] + 1).begin(), tokens.row(perm[i] + 1).end(),
              shuffled.row(i + 1).begin());
  }
  const auto [a, a_stack] = model_.forward_dense_tokens(tokens);
  const auto [b, b_stack] = model_.forward_dense_tokens(shuffled);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_LT(max_abs_diff(b.row(i), a.row(perm[i])), 1e-5);
    for (std::size_t j = 0; j < 16; ++j) {
      EXPECT_NEAR(b_stack.layers.back()(i, j), a_stack.layers.back()(perm[i], perm[j]), 1e-6);
    }
  }
}

TEST(ImageIo, PngRoundTripAndGrayExpansion) {
  testing_support::TempDir dir;
  const RgbImage img = pattern_image(7, 9);
  tagclip::write_png(dir / "x.png", img);
  const RgbImage back = tagclip::read_image(dir / "x.png");
  EXPECT_EQ(back.width, 9u);
  EXPECT_EQ(back.height, 7u);
  EXPECT_EQ(back.pixels, img.pixels);

  const RgbImage gray =
      tagclip::read_image(std::filesystem::path(TAGCLIP_SOURCE_DIR) / "tests/data/gray_5x3.png");
  EXPECT_EQ(gray.width, 5u);
  EXPECT_EQ(gray.height, 3u);
  EXPECT_EQ(gray.at(1, 2, 0), 110);
  EXPECT_EQ(gray.at(1, 2, 2), 110);
}

TEST(ImageIo, DecodesJpeg) {
  const RgbImage img =
      tagclip::read_image(std::filesystem::path(TAGCLIP_SOURCE_DIR) / "tests/data/solid_8x6.jpg");
  EXPECT_EQ(img.width, 8u);
  EXPECT_EQ(img.height, 6u);
  EXPECT_NEAR(img.at(3, 4, 0), 200, 4);
  EXPECT_NEAR(img.at(3, 4, 1), 40, 4);
  EXPECT_NEAR(img.at(3, 4, 2), 90, 4);
}

TEST(ImageIo, CorruptInputsAreInputErrors) {
  testing_support::TempDir dir;
  auto expect_input_error = [&](const std::string& bytes) {
    std::ofstream(dir / "bad.img", std::ios::binary) << bytes;
    try {
      tagclip::read_image(dir / "bad.img");
      ADD_FAILURE();
    } catch (const tagclip::Error& e) {
      EXPECT_EQ(e.kind(), tagclip::ErrorKind::kInput) << e.what();
    }
  };
  expect_input_error("GIF89a nope");
  expect_input_error(std::string("\x89PNG\r\n\x1a\n\0\0\0\0", 12));
  expect_input_error(std::string("\xff\xd8\xff\xe0\0\x10JFIF", 10));
  try {
    tagclip::read_image(dir / "missing.png");
    ADD_FAILURE();
  } catch (const tagclip::Error& e) {
    EXPECT_EQ(e.kind(), tagclip::ErrorKind::kIo);
  }
}

}  // namespace
