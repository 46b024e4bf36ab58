#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "finet/container.hpp"
#include "finet/imageops.hpp"
#include "finet/rng.hpp"
#include "finet/tensor.hpp"

namespace finet {

// Segmentation channel layout.
enum SegChannel {
  kSegFace = 0,       // face and hair
  kSegUpperSkin = 1,  // torso and arms
  kSegLowerSkin = 2,  // legs and feet
  kSegHat = 3,
  kSegTop = 4,
  kSegBottom = 5,
  kSegShoes = 6,
  kSegBackground = 7,
};

inline constexpr int kSegChannels = 8;
inline constexpr int kPoseChannels = 18;
inline constexpr int kNumCategories = 4;
inline constexpr int kCanonicalSize = 64;
inline constexpr double kHeatmapSigma = 1.5;
inline constexpr int kKeypointJitter = 3;
inline constexpr int kBoxMargin = 2;

enum class Category { Hat = 0, Top = 1, Bottom = 2, Shoes = 3 };

inline int seg_channel(Category c) {
  switch (c) {
    case Category::Hat: return kSegHat;
    case Category::Top: return kSegTop;
    case Category::Bottom: return kSegBottom;
    case Category::Shoes: return kSegShoes;
  }
  throw ContractError("bad category");
}

inline const char* category_name(Category c) {
  switch (c) {
    case Category::Hat: return "hat";
    case Category::Top: return "top";
    case Category::Bottom: return "bottom";
    case Category::Shoes: return "shoes";
  }
  throw ContractError("bad category");
}

inline Category category_from_name(const std::string& s) {
  if (s == "hat") return Category::Hat;
  if (s == "top") return Category::Top;
  if (s == "bottom") return Category::Bottom;
  if (s == "shoes") return Category::Shoes;
  throw ContractError("unknown category '" + s + "'");
}

enum class Sleeve { Long = 0, Short = 1, None = 2 };
enum class TopLength { Crop = 0, Regular = 1, Long = 2 };
enum class BottomKind { Pants = 0, Shorts = 1, Skirt = 2 };
enum class MinorKind { StyleA = 0, StyleB = 1 };  // hat and shoe shapes

struct GarmentParams {
  Category category = Category::Top;
  bool present = false;
  Sleeve sleeve = Sleeve::Long;           // tops
  TopLength length = TopLength::Regular;  // tops
  BottomKind bottom = BottomKind::Pants;  // bottoms
  MinorKind kind = MinorKind::StyleA;     // hats and shoes
  double hue = 0.0;                       // [0, 1)
  double saturation = 0.0;
  double value = 0.0;
};

// Everything an outfit is derived from: a color family, a formality
// level and an RNG seed for the per-garment draws.
struct StyleSeed {
  double hue_family = 0.0;  // [0, 1)
  double formality = 0.0;   // [0, 1]
  std::uint64_t rng_seed = 0;
  bool formal() const { return formality >= 0.5; }
};

struct OutfitSample {
  Tensor<float> image;  // H x W x 3, values in [-1, 1]
  Tensor<float> seg;    // H x W x 8, one-hot
  Tensor<float> pose;   // H x W x 18, values in [0, 1]
  std::array<GarmentParams, kNumCategories> garments;  // indexed by Category
  StyleSeed style;
  int size() const { return image.dim(0); }
};

// ---------------------------------------------------------------------------
// Color helpers.

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1) {
    r1 = c; g1 = x;
  } else if (hp < 2) {
    r1 = x; g1 = c;
  } else if (hp < 3) {
    g1 = c; b1 = x;
  } else if (hp < 4) {
    g1 = x; b1 = c;
  } else if (hp < 5) {
    r1 = x; b1 = c;
  } else {
    r1 = c; b1 = x;
  }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double c = mx - mn;
  v = mx;
  s = mx > 0 ? c / mx : 0.0;
  if (c <= 0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = std::fmod((g - b) / c + 6.0, 6.0);
  } else if (mx == g) {
    h = (b - r) / c + 2.0;
  } else {
    h = (r - g) / c + 4.0;
  }
  h /= 6.0;
}

inline double circular_hue_dist(double a, double b) {
  double d = std::abs(a - b);
  d = d - std::floor(d);
  return std::min(d, 1.0 - d);
}

inline double wrap_unit(double x) { return x - std::floor(x); }

// Flat colors for the figure. Deliberately pale so saturated garment
// colors are separable from skin by plain RGB distance.
inline constexpr double kBackgroundRgb[3] = {0.10, 0.10, 0.12};
inline constexpr double kFaceRgb[3] = {0.93, 0.82, 0.73};
inline constexpr double kUpperSkinRgb[3] = {0.91, 0.79, 0.70};
inline constexpr double kLowerSkinRgb[3] = {0.89, 0.77, 0.68};

// ---------------------------------------------------------------------------
// Compatibility rules. A garment shape is either allowed or not for a
// formality band; the oracle multiplies this 0/1 term with a hue term
// that decays once the garment hue leaves the outfit's color family.

inline bool shape_allowed(const GarmentParams& g, bool formal) {
  if (!g.present) return true;
  switch (g.category) {
    case Category::Top:
      if (formal) {
        return (g.sleeve == Sleeve::Long || g.sleeve == Sleeve::Short) &&
               (g.length == TopLength::Regular || g.length == TopLength::Long);
      }
      return g.length == TopLength::Crop || g.length == TopLength::Regular;
    case Category::Bottom:
      if (formal) return g.bottom == BottomKind::Pants || g.bottom == BottomKind::Skirt;
      return g.bottom == BottomKind::Pants || g.bottom == BottomKind::Shorts;
    case Category::Hat:
    case Category::Shoes:
      return formal ? g.kind == MinorKind::StyleA : g.kind == MinorKind::StyleB;
  }
  throw ContractError("bad category");
}

inline double hue_term(const GarmentParams& g, const StyleSeed& style) {
  if (!g.present) return 1.0;
  const double d = circular_hue_dist(g.hue, style.hue_family);
  if (d <= 0.10) return 1.0;
  return std::max(0.0, 1.0 - 5.0 * (d - 0.10));
}

// Exact ground-truth compatibility of one garment with an outfit's
// style. Product of the hue term and the 0/1 shape term.
inline double compat_oracle(const GarmentParams& g, const StyleSeed& style) {
  const double shape = shape_allowed(g, style.formal()) ? 1.0 : 0.0;
  return hue_term(g, style) * shape;
}

// ---------------------------------------------------------------------------
// Garment sampling. All draws happen in a fixed order regardless of
// presence so a given rng_seed always yields the same outfit.

inline std::array<GarmentParams, kNumCategories> sample_garments(const StyleSeed& style) {
  Rng rng(style.rng_seed);
  const bool formal = style.formal();
  std::array<GarmentParams, kNumCategories> g;
  for (int i = 0; i < kNumCategories; ++i) g[i].category = static_cast<Category>(i);

  auto& bottom = g[static_cast<int>(Category::Bottom)];
  bottom.present = true;
  if (formal) {
    bottom.bottom = rng.uniform() < 0.5 ? BottomKind::Pants : BottomKind::Skirt;
  } else {
    bottom.bottom = rng.uniform() < 0.5 ? BottomKind::Pants : BottomKind::Shorts;
  }

  auto& top = g[static_cast<int>(Category::Top)];
  top.present = true;
  if (formal) {
    top.sleeve = rng.uniform() < 0.5 ? Sleeve::Long : Sleeve::Short;
    top.length = rng.uniform() < 0.5 ? TopLength::Regular : TopLength::Long;
  } else {
    // Styling constraint used only when sampling: shorts never pair
    // with long sleeves. The oracle does not know about it.
    if (bottom.bottom == BottomKind::Shorts) {
      top.sleeve = rng.uniform() < 0.5 ? Sleeve::Short : Sleeve::None;
    } else {
      const int s = rng.uniform_int(3);
      top.sleeve = static_cast<Sleeve>(s);
    }
    top.length = rng.uniform() < 0.5 ? TopLength::Crop : TopLength::Regular;
  }

  auto& hat = g[static_cast<int>(Category::Hat)];
  hat.present = rng.uniform() < 0.5;
  hat.kind = formal ? MinorKind::StyleA : MinorKind::StyleB;

  auto& shoes = g[static_cast<int>(Category::Shoes)];
  shoes.present = rng.uniform() < 0.8;
  shoes.kind = formal ? MinorKind::StyleA : MinorKind::StyleB;

  for (auto& item : g) {
    item.hue = wrap_unit(style.hue_family + rng.uniform(-0.05, 0.05));
    item.saturation = rng.uniform(0.60, 0.95);
    item.value = rng.uniform(0.55, 0.95);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Rendering. The figure lives on a canonical 64x64 grid; rectangles are
// scaled for other resolutions and rasterized with hard edges.

namespace detail {

struct Canvas {
  Tensor<float>* image = nullptr;  // optional
  Tensor<float>* seg = nullptr;    // optional
  int h = 0, w = 0;
  double s = 1.0;  // scale from canonical units

  void put(int y, int x, const double rgb[3], int ch) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    if (image) {
      image->at(y, x, 0) = static_cast<float>(rgb[0] * 2.0 - 1.0);
      image->at(y, x, 1) = static_cast<float>(rgb[1] * 2.0 - 1.0);
      image->at(y, x, 2) = static_cast<float>(rgb[2] * 2.0 - 1.0);
    }
    if (seg) {
      for (int c = 0; c < kSegChannels; ++c) seg->at(y, x, c) = 0.0f;
      seg->at(y, x, ch) = 1.0f;
    }
  }

  // Canonical-unit rectangle [x0, x1) x [y0, y1).
  void rect(double x0, double y0, double x1, double y1, const double rgb[3], int ch) {
    const int yi0 = static_cast<int>(std::lround(y0 * s));
    const int yi1 = static_cast<int>(std::lround(y1 * s));
    const int xi0 = static_cast<int>(std::lround(x0 * s));
    const int xi1 = static_cast<int>(std::lround(x1 * s));
    for (int y = yi0; y < yi1; ++y) {
      for (int x = xi0; x < xi1; ++x) put(y, x, rgb, ch);
    }
  }

  void circle(double cx, double cy, double r, const double rgb[3], int ch) {
    const double cxs = cx * s, cys = cy * s, rs = r * s;
    const int y0 = static_cast<int>(std::floor(cys - rs)) - 1;
    const int y1 = static_cast<int>(std::ceil(cys + rs)) + 1;
    const int x0 = static_cast<int>(std::floor(cxs - rs)) - 1;
    const int x1 = static_cast<int>(std::ceil(cxs + rs)) + 1;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dy = y + 0.5 - cys;
        const double dx = x + 0.5 - cxs;
        if (dx * dx + dy * dy <= rs * rs) put(y, x, rgb, ch);
      }
    }
  }
};

inline void draw_body(Canvas& cv) {
  cv.circle(32, 9, 5, kFaceRgb, kSegFace);
  cv.rect(30, 14, 34, 16, kUpperSkinRgb, kSegUpperSkin);  // neck
  cv.rect(26, 16, 38, 35, kUpperSkinRgb, kSegUpperSkin);  // torso
  cv.rect(22, 17, 26, 31, kUpperSkinRgb, kSegUpperSkin);  // left arm
  cv.rect(38, 17, 42, 31, kUpperSkinRgb, kSegUpperSkin);  // right arm
  cv.rect(27, 35, 32, 57, kLowerSkinRgb, kSegLowerSkin);  // left leg
  cv.rect(33, 35, 38, 57, kLowerSkinRgb, kSegLowerSkin);  // right leg
  cv.rect(26, 57, 32, 61, kLowerSkinRgb, kSegLowerSkin);  // left foot
  cv.rect(33, 57, 39, 61, kLowerSkinRgb, kSegLowerSkin);  // right foot
}

inline void draw_garment(Canvas& cv, const GarmentParams& g) {
  if (!g.present) return;
  double rgb[3];
  hsv_to_rgb(g.hue, g.saturation, g.value, rgb[0], rgb[1], rgb[2]);
  const int ch = seg_channel(g.category);
  switch (g.category) {
    case Category::Top: {
      double torso_end = 35;
      if (g.length == TopLength::Crop) torso_end = 29;
      if (g.length == TopLength::Long) torso_end = 41;
      cv.rect(25, 16, 39, torso_end, rgb, ch);
      if (g.sleeve != Sleeve::None) {
        const double sleeve_end = g.sleeve == Sleeve::Long ? 31 : 24;
        cv.rect(21, 17, 26, sleeve_end, rgb, ch);
        cv.rect(38, 17, 43, sleeve_end, rgb, ch);
      }
      break;
    }
    case Category::Bottom: {
      if (g.bottom == BottomKind::Skirt) {
        cv.rect(25, 35, 39, 49, rgb, ch);
      } else {
        const double leg_end = g.bottom == BottomKind::Pants ? 57 : 46;
        cv.rect(26, 35, 32, leg_end, rgb, ch);
        cv.rect(33, 35, 39, leg_end, rgb, ch);
      }
      break;
    }
    case Category::Hat: {
      if (g.kind == MinorKind::StyleA) {
        cv.rect(27, 1, 38, 5, rgb, ch);  // crown
        cv.rect(23, 5, 42, 7, rgb, ch);  // brim
      } else {
        cv.rect(26, 1, 39, 6, rgb, ch);  // beanie
      }
      break;
    }
    case Category::Shoes: {
      const double shoe_top = g.kind == MinorKind::StyleA ? 57 : 53;
      cv.rect(25, shoe_top, 32, 61, rgb, ch);
      cv.rect(33, shoe_top, 40, 61, rgb, ch);
      break;
    }
  }
}

}  // namespace detail

// Canonical keypoints, (x, y) in canonical units. COCO-style ordering.
inline std::array<std::array<double, 2>, kPoseChannels> canonical_keypoints() {
  return {{{32, 8},  {32, 15}, {38, 17}, {40, 23}, {40, 29}, {26, 17}, {24, 23}, {24, 29}, {35, 35},
           {35, 46}, {35, 56}, {29, 35}, {29, 46}, {29, 56}, {34, 7},  {30, 7},  {36, 9},  {28, 9}}};
}

// Binary mask of one garment shape drawn alone on an empty canvas.
// Used as the ground-truth shape template in evaluation.
inline Tensor<float> render_garment_mask(const GarmentParams& g, int size = kCanonicalSize) {
  Tensor<float> seg({size, size, kSegChannels});
  detail::Canvas cv{nullptr, &seg, size, size, size / static_cast<double>(kCanonicalSize)};
  GarmentParams copy = g;
  copy.present = true;
  detail::draw_garment(cv, copy);
  Tensor<float> mask({size, size, 1});
  const int ch = seg_channel(g.category);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) mask.at(y, x, 0) = seg.at(y, x, ch);
  }
  return mask;
}

// All shape codes a category can take, absent excluded.
inline std::vector<GarmentParams> category_shape_codes(Category c) {
  std::vector<GarmentParams> out;
  GarmentParams g;
  g.category = c;
  g.present = true;
  switch (c) {
    case Category::Top:
      for (int s = 0; s < 3; ++s) {
        for (int l = 0; l < 3; ++l) {
          g.sleeve = static_cast<Sleeve>(s);
          g.length = static_cast<TopLength>(l);
          out.push_back(g);
        }
      }
      break;
    case Category::Bottom:
      for (int b = 0; b < 3; ++b) {
        g.bottom = static_cast<BottomKind>(b);
        out.push_back(g);
      }
      break;
    case Category::Hat:
    case Category::Shoes:
      for (int k = 0; k < 2; ++k) {
        g.kind = static_cast<MinorKind>(k);
        out.push_back(g);
      }
      break;
  }
  return out;
}

inline OutfitSample generate_outfit(const StyleSeed& style, int size = kCanonicalSize) {
  OutfitSample out;
  out.style = style;
  out.garments = sample_garments(style);
  out.image = Tensor<float>({size, size, 3});
  out.seg = Tensor<float>({size, size, kSegChannels});
  out.pose = Tensor<float>({size, size, kPoseChannels});

  detail::Canvas cv{&out.image, &out.seg, size, size, size / static_cast<double>(kCanonicalSize)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) cv.put(y, x, kBackgroundRgb, kSegBackground);
  }
  detail::draw_body(cv);
  // Later layers overdraw earlier ones: bottom, then shoes, top, hat.
  detail::draw_garment(cv, out.garments[static_cast<int>(Category::Bottom)]);
  detail::draw_garment(cv, out.garments[static_cast<int>(Category::Shoes)]);
  detail::draw_garment(cv, out.garments[static_cast<int>(Category::Top)]);
  detail::draw_garment(cv, out.garments[static_cast<int>(Category::Hat)]);

  // Keypoint heatmaps: unit peak, sigma in output pixels, jitter +/-3 px.
  Rng rng(detail::splitmix64(style.rng_seed ^ 0x706f7365ULL));
  const auto kp = canonical_keypoints();
  const double s = size / static_cast<double>(kCanonicalSize);
  for (int k = 0; k < kPoseChannels; ++k) {
    const double kx = kp[k][0] * s + (rng.uniform_int(2 * kKeypointJitter + 1) - kKeypointJitter);
    const double ky = kp[k][1] * s + (rng.uniform_int(2 * kKeypointJitter + 1) - kKeypointJitter);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d2 = (x - kx) * (x - kx) + (y - ky) * (y - ky);
        out.pose.at(y, x, k) = static_cast<float>(std::exp(-d2 / (2.0 * kHeatmapSigma * kHeatmapSigma)));
      }
    }
  }
  return out;
}

inline std::vector<StyleSeed> sample_styles(int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<StyleSeed> out(count);
  for (auto& s : out) {
    s.hue_family = rng.uniform();
    s.formality = rng.uniform();
    s.rng_seed = rng.next_u64();
  }
  return out;
}

inline std::vector<OutfitSample> make_dataset(int count, std::uint64_t seed, int size = kCanonicalSize) {
  std::vector<OutfitSample> out;
  out.reserve(count);
  for (const auto& style : sample_styles(count, seed)) out.push_back(generate_outfit(style, size));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset serialization (version finet-synth/1). The top-level manifest
// records count and resolution; each sample is a tensor container in
// its own sample_NNNNNN directory. Garment shape codes and the style
// seed are stored as small float tensors; the 64-bit seed is split into
// 24-bit limbs so float32 holds it exactly.

namespace detail {

inline Tensor<float> encode_garments(const std::array<GarmentParams, kNumCategories>& gs) {
  Tensor<float> t({kNumCategories, 6});
  for (int i = 0; i < kNumCategories; ++i) {
    const auto& g = gs[i];
    float a = 0, b = 0;
    switch (g.category) {
      case Category::Top:
        a = static_cast<float>(g.sleeve);
        b = static_cast<float>(g.length);
        break;
      case Category::Bottom: a = static_cast<float>(g.bottom); break;
      case Category::Hat:
      case Category::Shoes: a = static_cast<float>(g.kind); break;
    }
    t.at(i, 0) = g.present ? 1.0f : 0.0f;
    t.at(i, 1) = a;
    t.at(i, 2) = b;
    t.at(i, 3) = static_cast<float>(g.hue);
    t.at(i, 4) = static_cast<float>(g.saturation);
    t.at(i, 5) = static_cast<float>(g.value);
  }
  return t;
}

inline std::array<GarmentParams, kNumCategories> decode_garments(const Tensor<float>& t) {
  if (t.shape() != std::vector<int>{kNumCategories, 6}) throw IoError("bad garments tensor shape");
  std::array<GarmentParams, kNumCategories> gs;
  for (int i = 0; i < kNumCategories; ++i) {
    auto& g = gs[i];
    g.category = static_cast<Category>(i);
    g.present = t.at(i, 0) > 0.5f;
    const int a = static_cast<int>(t.at(i, 1));
    const int b = static_cast<int>(t.at(i, 2));
    switch (g.category) {
      case Category::Top:
        g.sleeve = static_cast<Sleeve>(a);
        g.length = static_cast<TopLength>(b);
        break;
      case Category::Bottom: g.bottom = static_cast<BottomKind>(a); break;
      case Category::Hat:
      case Category::Shoes: g.kind = static_cast<MinorKind>(a); break;
    }
    g.hue = t.at(i, 3);
    g.saturation = t.at(i, 4);
    g.value = t.at(i, 5);
  }
  return gs;
}

inline Tensor<float> encode_style(const StyleSeed& s) {
  Tensor<float> t({5});
  t[0] = static_cast<float>(s.hue_family);
  t[1] = static_cast<float>(s.formality);
  t[2] = static_cast<float>(s.rng_seed & 0xffffffULL);
  t[3] = static_cast<float>((s.rng_seed >> 24) & 0xffffffULL);
  t[4] = static_cast<float>(s.rng_seed >> 48);
  return t;
}

inline StyleSeed decode_style(const Tensor<float>& t) {
  if (t.shape() != std::vector<int>{5}) throw IoError("bad style tensor shape");
  StyleSeed s;
  s.hue_family = t[0];
  s.formality = t[1];
  s.rng_seed = static_cast<std::uint64_t>(t[2]) | (static_cast<std::uint64_t>(t[3]) << 24) |
               (static_cast<std::uint64_t>(t[4]) << 48);
  return s;
}

inline std::string sample_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d", index);
  return buf;
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& dir, const std::vector<OutfitSample>& samples) {
  if (samples.empty()) throw IoError("refusing to write empty dataset");
  std::filesystem::create_directories(dir);
  const int size = samples.front().size();
  {
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("cannot write dataset manifest in " + dir.string());
    manifest << kDatasetVersion << "\n";
    manifest << "meta count " << samples.size() << "\n";
    manifest << "meta resolution " << size << "\n";
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    NamedTensors c;
    c.add("image", s.image);
    c.add("seg", s.seg);
    c.add("pose", s.pose);
    c.add("garments", detail::encode_garments(s.garments));
    c.add("style", detail::encode_style(s.style));
    write_container(dir / detail::sample_dir_name(static_cast<int>(i)), kDatasetVersion, c);
  }
}

// Reads one sample container (any sample_NNNNNN directory works as a
// standalone input).
inline OutfitSample read_sample(const std::filesystem::path& dir) {
  auto c = read_container(dir, kDatasetVersion);
  OutfitSample s;
  s.image = c.require("image");
  s.seg = c.require("seg");
  s.pose = c.require("pose");
  s.garments = detail::decode_garments(c.require("garments"));
  s.style = detail::decode_style(c.require("style"));
  if (s.image.rank() != 3 || s.image.dim(2) != 3 || s.image.dim(0) != s.image.dim(1)) {
    throw IoError("sample image shape mismatch in " + dir.string());
  }
  const int res = s.image.dim(0);
  if (s.seg.shape() != std::vector<int>{res, res, kSegChannels}) {
    throw IoError("sample seg shape mismatch in " + dir.string());
  }
  if (s.pose.shape() != std::vector<int>{res, res, kPoseChannels}) {
    throw IoError("sample pose shape mismatch in " + dir.string());
  }
  return s;
}

inline std::vector<OutfitSample> read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open dataset manifest: " + manifest_path.string());
  std::string version;
  std::getline(manifest, version);
  if (version != kDatasetVersion) {
    throw IoError("dataset version mismatch: expected '" + std::string(kDatasetVersion) + "', found '" +
                  version + "'");
  }
  int count = -1, resolution = -1;
  std::string line;
  while (std::getline(manifest, line)) {
    std::istringstream ss(line);
    std::string directive, key;
    ss >> directive >> key;
    if (directive != "meta") throw IoError("unexpected dataset manifest line: " + line);
    if (key == "count") ss >> count;
    if (key == "resolution") ss >> resolution;
  }
  if (count <= 0 || resolution <= 0) throw IoError("dataset manifest missing count or resolution");

  std::vector<OutfitSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto c = read_container(dir / detail::sample_dir_name(i), kDatasetVersion);
    OutfitSample s;
    s.image = c.require("image");
    s.seg = c.require("seg");
    s.pose = c.require("pose");
    s.garments = detail::decode_garments(c.require("garments"));
    s.style = detail::decode_style(c.require("style"));
    const std::vector<int> img_shape{resolution, resolution, 3};
    if (s.image.shape() != img_shape) throw IoError("sample image shape mismatch");
    if (s.seg.shape() != std::vector<int>{resolution, resolution, kSegChannels}) {
      throw IoError("sample seg shape mismatch");
    }
    if (s.pose.shape() != std::vector<int>{resolution, resolution, kPoseChannels}) {
      throw IoError("sample pose shape mismatch");
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace finet
