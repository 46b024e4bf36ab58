#include "finet/masks.hpp"

#include <gtest/gtest.h>

#include "finet/synthdata.hpp"

using namespace finet;

namespace {

OutfitSample sample_outfit(std::uint64_t seed = 42, double formality = 0.3) {
  StyleSeed s;
  s.hue_family = 0.6;
  s.formality = formality;
  s.rng_seed = seed;
  return generate_outfit(s);
}

// Brute-force reference: bbox over an explicit channel union, plus margin.
Box reference_box(const Tensor<float>& seg, std::vector<int> channels) {
  const int h = seg.dim(0), w = seg.dim(1);
  int y0 = h, x0 = w, y1 = 0, x1 = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c : channels) {
        if (seg.at(y, x, c) > 0.5f) {
          y0 = std::min(y0, y);
          x0 = std::min(x0, x);
          y1 = std::max(y1, y + 1);
          x1 = std::max(x1, x + 1);
        }
      }
    }
  }
  return expand_clamped(Box{y0, x0, y1, x1}, kBoxMargin, h, w);
}

}  // namespace

TEST(PlausibleBox, MatchesChannelUnionPlusMargin) {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    auto s = sample_outfit(seed);
    EXPECT_EQ(plausible_box(s.seg, Category::Top), reference_box(s.seg, {kSegTop, kSegUpperSkin}));
    EXPECT_EQ(plausible_box(s.seg, Category::Bottom), reference_box(s.seg, {kSegBottom, kSegLowerSkin}));
    if (s.garments[static_cast<int>(Category::Hat)].present) {
      EXPECT_EQ(plausible_box(s.seg, Category::Hat), reference_box(s.seg, {kSegHat}));
    }
  }
}

TEST(PlausibleBox, EmptyChannelFallsBackToCanonicalRegion) {
  Tensor<float> seg({64, 64, kSegChannels});
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) seg.at(y, x, kSegBackground) = 1.0f;
  }
  const Box hat = plausible_box(seg, Category::Hat);
  EXPECT_FALSE(hat.empty());
  EXPECT_EQ(hat, (Box{0, 21, 9, 44}));
  const Box shoes = plausible_box(seg, Category::Shoes);
  EXPECT_EQ(shoes, (Box{51, 23, 63, 42}));
}

TEST(PlausibleBox, CoversGarmentPixels) {
  // Any rendered garment must lie inside its category's plausible box,
  // including shape codes other than the one in the outfit.
  auto s = sample_outfit(11);
  for (Category cat : {Category::Top, Category::Bottom}) {
    const Box b = plausible_box(s.seg, cat);
    const int ch = seg_channel(cat);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (s.seg.at(y, x, ch) > 0.5f) {
          EXPECT_GE(y, b.y0);
          EXPECT_LT(y, b.y1);
          EXPECT_GE(x, b.x0);
          EXPECT_LT(x, b.x1);
        }
      }
    }
  }
}

TEST(MaskShapeContext, ErasesBoxToBackgroundOnly) {
  auto s = sample_outfit(5);
  const Box b = plausible_box(s.seg, Category::Top);
  auto masked = mask_shape_context(s.seg, Category::Top);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool inside = y >= b.y0 && y < b.y1 && x >= b.x0 && x < b.x1;
      for (int c = 0; c < kSegChannels; ++c) {
        const float want = inside ? (c == kSegBackground ? 1.0f : 0.0f) : s.seg.at(y, x, c);
        EXPECT_EQ(masked.at(y, x, c), want);
      }
    }
  }
}

TEST(MaskAppearanceContext, ZeroesBoxBitExactOutside) {
  auto s = sample_outfit(6);
  const Box b = plausible_box(s.seg, Category::Bottom);
  auto masked = mask_appearance_context(s.image, s.seg, Category::Bottom);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool inside = y >= b.y0 && y < b.y1 && x >= b.x0 && x < b.x1;
      for (int c = 0; c < 3; ++c) {
        const float want = inside ? 0.0f : s.image.at(y, x, c);
        EXPECT_EQ(masked.at(y, x, c), want);
      }
    }
  }
}

TEST(PersonReps, ShapeRepConcatenatesPoseAndFaceMask) {
  auto s = sample_outfit(7);
  auto rep = person_rep_shape(s.pose, s.seg);
  ASSERT_EQ(rep.shape(), (std::vector<int>{64, 64, kPoseChannels + 1}));
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      for (int c = 0; c < kPoseChannels; ++c) EXPECT_EQ(rep.at(y, x, c), s.pose.at(y, x, c));
      EXPECT_EQ(rep.at(y, x, kPoseChannels), s.seg.at(y, x, kSegFace));
    }
  }
}

TEST(PersonReps, AppearanceRepMasksFaceRgb) {
  auto s = sample_outfit(8);
  auto rep = person_rep_appearance(s.seg, s.image);
  ASSERT_EQ(rep.shape(), (std::vector<int>{64, 64, kSegChannels + 3}));
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      for (int c = 0; c < kSegChannels; ++c) EXPECT_EQ(rep.at(y, x, c), s.seg.at(y, x, c));
      const bool face = s.seg.at(y, x, kSegFace) > 0.5f;
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(rep.at(y, x, kSegChannels + c), face ? s.image.at(y, x, c) : 0.0f);
      }
    }
  }
}

TEST(ContextGarments, SlotLayoutAndSentinels) {
  auto s = sample_outfit(9);
  const int enc = 32;
  for (Category target : {Category::Top, Category::Bottom}) {
    auto xc = context_garments(s.image, s.seg, target, enc);
    ASSERT_EQ(xc.shape(), (std::vector<int>{enc, enc, 12}));
    for (int slot = 0; slot < kNumCategories; ++slot) {
      const Category cat = static_cast<Category>(slot);
      Tensor<float> expect;
      if (cat == target) {
        expect = Tensor<float>::full({enc, enc, 3}, 1.0f);
      } else if (!s.garments[slot].present) {
        expect = Tensor<float>({enc, enc, 3});
      } else {
        expect = extract_garment_segment(s.image, s.seg, cat, enc);
      }
      for (int y = 0; y < enc; ++y) {
        for (int x = 0; x < enc; ++x) {
          for (int c = 0; c < 3; ++c) EXPECT_EQ(xc.at(y, x, slot * 3 + c), expect.at(y, x, c));
        }
      }
    }
  }
}

TEST(ContextGarments, IndependentOfTargetPixels) {
  // Poison every pixel of the target garment: x_c must not change.
  auto s = sample_outfit(10);
  auto poisoned = s.image;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (s.seg.at(y, x, kSegTop) > 0.5f) {
        poisoned.at(y, x, 0) = 1.0f;
        poisoned.at(y, x, 1) = -1.0f;
        poisoned.at(y, x, 2) = 1.0f;
      }
    }
  }
  auto a = context_garments(s.image, s.seg, Category::Top, 32);
  auto b = context_garments(poisoned, s.seg, Category::Top, 32);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(CodeInputs, ShapeAndAppearanceInputs) {
  auto s = sample_outfit(12);
  auto xs = shape_code_input(s.seg, Category::Top, 32);
  ASSERT_EQ(xs.shape(), (std::vector<int>{32, 32, 1}));
  float mass = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_GE(xs[i], 0.0f);
    EXPECT_LE(xs[i], 1.0f);
    mass += xs[i];
  }
  EXPECT_GT(mass, 0.0f);

  auto xa = appearance_code_input(s.image, s.seg, Category::Top, 32);
  ASSERT_EQ(xa.shape(), (std::vector<int>{32, 32, 3}));
}

TEST(Resize, IdentityAndConstantMaps) {
  auto s = sample_outfit(13);
  auto same = resize_bilinear(s.image, 64, 64);
  for (std::size_t i = 0; i < same.size(); ++i) EXPECT_EQ(same[i], s.image[i]);

  auto flat = Tensor<float>::full({16, 16, 2}, 0.37f);
  auto up = resize_bilinear(flat, 33, 29);
  for (std::size_t i = 0; i < up.size(); ++i) EXPECT_FLOAT_EQ(up[i], 0.37f);
}

TEST(Resize, HalfScaleAveragesAlignedBlocks) {
  Tensor<float> src({4, 4, 1});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) src.at(y, x, 0) = static_cast<float>(y * 4 + x);
  }
  auto down = resize_bilinear(src, 2, 2);
  EXPECT_FLOAT_EQ(down.at(0, 0, 0), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(down.at(0, 1, 0), (2 + 3 + 6 + 7) / 4.0f);
  EXPECT_FLOAT_EQ(down.at(1, 0, 0), (8 + 9 + 12 + 13) / 4.0f);
  EXPECT_FLOAT_EQ(down.at(1, 1, 0), (10 + 11 + 14 + 15) / 4.0f);
}

TEST(BoxOps, CropPasteRoundTrip) {
  auto s = sample_outfit(14);
  const Box b{10, 20, 40, 50};
  auto patch = crop(s.image, b);
  auto dst = s.image;
  // Scribble inside the box, then paste the original patch back.
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      for (int c = 0; c < 3; ++c) dst.at(y, x, c) = 9.0f;
    }
  }
  paste(dst, patch, b);
  for (std::size_t i = 0; i < dst.size(); ++i) EXPECT_EQ(dst[i], s.image[i]);

  EXPECT_THROW(paste(dst, patch, Box{40, 40, 70, 70}), DimensionError);
  EXPECT_THROW(crop(s.image, Box{0, 0, 65, 10}), DimensionError);
}
