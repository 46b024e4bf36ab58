#pragma once

#include <cmath>

#include "finet/imageops.hpp"
#include "finet/synthdata.hpp"
#include "finet/tensor.hpp"

namespace finet {

// Region a garment of the given category could plausibly occupy:
// tops take the union of the top and upper-skin channels, bottoms the
// union of the bottom and lower-skin channels, hats and shoes their own
// channel; the bounding box is then enlarged by kBoxMargin pixels.
// When the union is empty the canonical rendering extent is used.
template <typename T>
Box plausible_box(const Tensor<T>& seg, Category cat) {
  const int h = seg.dim(0), w = seg.dim(1);
  int ch_a = seg_channel(cat), ch_b = -1;
  if (cat == Category::Top) ch_b = kSegUpperSkin;
  if (cat == Category::Bottom) ch_b = kSegLowerSkin;

  int y0 = h, x0 = w, y1 = 0, x1 = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool on = seg.at(y, x, ch_a) > T(0.5) || (ch_b >= 0 && seg.at(y, x, ch_b) > T(0.5));
      if (on) {
        y0 = std::min(y0, y);
        x0 = std::min(x0, x);
        y1 = std::max(y1, y + 1);
        x1 = std::max(x1, x + 1);
      }
    }
  }
  if (y1 > y0) return expand_clamped(Box{y0, x0, y1, x1}, kBoxMargin, h, w);

  // Canonical fallback: garment rendering extent plus margin, scaled.
  const double s = h / static_cast<double>(kCanonicalSize);
  auto scaled = [&](int cy0, int cx0, int cy1, int cx1) {
    Box b{static_cast<int>(std::lround(cy0 * s)), static_cast<int>(std::lround(cx0 * s)),
          static_cast<int>(std::lround(cy1 * s)), static_cast<int>(std::lround(cx1 * s))};
    return expand_clamped(b, kBoxMargin, h, w);
  };
  switch (cat) {
    case Category::Hat: return scaled(1, 23, 7, 42);
    case Category::Top: return scaled(14, 21, 41, 43);
    case Category::Bottom: return scaled(35, 25, 61, 39);
    case Category::Shoes: return scaled(53, 25, 61, 40);
  }
  throw ContractError("bad category");
}

// S-hat: segmentation with the target's plausible region erased to
// background.
template <typename T>
Tensor<T> mask_shape_context(const Tensor<T>& seg, Category cat) {
  Tensor<T> out = seg;
  const Box b = plausible_box(seg, cat);
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      for (int c = 0; c < kSegChannels; ++c) out.at(y, x, c) = T(0);
      out.at(y, x, kSegBackground) = T(1);
    }
  }
  return out;
}

// I-hat: image with the target's plausible region zeroed.
template <typename T>
Tensor<T> mask_appearance_context(const Tensor<T>& image, const Tensor<T>& seg, Category cat) {
  Tensor<T> out = image;
  const Box b = plausible_box(seg, cat);
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = T(0);
    }
  }
  return out;
}

// p_s: pose heatmaps plus the face/hair mask, 19 channels.
template <typename T>
Tensor<T> person_rep_shape(const Tensor<T>& pose, const Tensor<T>& seg) {
  const int h = pose.dim(0), w = pose.dim(1);
  Tensor<T> out({h, w, kPoseChannels + 1});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < kPoseChannels; ++c) out.at(y, x, c) = pose.at(y, x, c);
      out.at(y, x, kPoseChannels) = seg.at(y, x, kSegFace);
    }
  }
  return out;
}

// p_a: segmentation plus face/hair RGB, 11 channels.
template <typename T>
Tensor<T> person_rep_appearance(const Tensor<T>& seg, const Tensor<T>& image) {
  const int h = seg.dim(0), w = seg.dim(1);
  Tensor<T> out({h, w, kSegChannels + 3});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < kSegChannels; ++c) out.at(y, x, c) = seg.at(y, x, c);
      const bool face = seg.at(y, x, kSegFace) > T(0.5);
      for (int c = 0; c < 3; ++c) out.at(y, x, kSegChannels + c) = face ? image.at(y, x, c) : T(0);
    }
  }
  return out;
}

// One garment's RGB segment masked out of the image, cropped to its
// bounding box and resized. Returns all zeros when the channel is empty.
template <typename T>
Tensor<T> extract_garment_segment(const Tensor<T>& image, const Tensor<T>& seg, Category cat, int out_size) {
  const int h = image.dim(0), w = image.dim(1);
  const int ch = seg_channel(cat);
  Tensor<T> masked({h, w, 3});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool on = seg.at(y, x, ch) > T(0.5);
      for (int c = 0; c < 3; ++c) masked.at(y, x, c) = on ? image.at(y, x, c) : T(0);
    }
  }
  const Box b = bbox_of_channel(seg, ch);
  if (b.empty()) return Tensor<T>({out_size, out_size, 3});
  return resize_bilinear(crop(masked, b), out_size, out_size);
}

// x_c: four context slots stacked in category order (hat, top, bottom,
// shoes), each an RGB garment segment at encoder resolution. The target
// category's slot is all ones; absent garments are all zeros.
template <typename T>
Tensor<T> context_garments(const Tensor<T>& image, const Tensor<T>& seg, Category target, int out_size) {
  Tensor<T> out({out_size, out_size, 3 * kNumCategories});
  for (int slot = 0; slot < kNumCategories; ++slot) {
    const Category cat = static_cast<Category>(slot);
    Tensor<T> seg_rgb;
    bool ones = false;
    if (cat == target) {
      ones = true;
    } else {
      seg_rgb = extract_garment_segment(image, seg, cat, out_size);
    }
    for (int y = 0; y < out_size; ++y) {
      for (int x = 0; x < out_size; ++x) {
        for (int c = 0; c < 3; ++c) {
          out.at(y, x, slot * 3 + c) = ones ? T(1) : seg_rgb.at(y, x, c);
        }
      }
    }
  }
  return out;
}

// x_s: target garment mask at encoder resolution, one channel.
template <typename T>
Tensor<T> shape_code_input(const Tensor<T>& seg, Category cat, int out_size) {
  const int h = seg.dim(0), w = seg.dim(1);
  const int ch = seg_channel(cat);
  Tensor<T> mask({h, w, 1});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) mask.at(y, x, 0) = seg.at(y, x, ch);
  }
  return resize_bilinear(mask, out_size, out_size);
}

// x_a: target garment RGB segment at encoder resolution, full frame.
template <typename T>
Tensor<T> appearance_code_input(const Tensor<T>& image, const Tensor<T>& seg, Category cat, int out_size) {
  const int h = image.dim(0), w = image.dim(1);
  const int ch = seg_channel(cat);
  Tensor<T> masked({h, w, 3});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool on = seg.at(y, x, ch) > T(0.5);
      for (int c = 0; c < 3; ++c) masked.at(y, x, c) = on ? image.at(y, x, c) : T(0);
    }
  }
  return resize_bilinear(masked, out_size, out_size);
}

// Channel concatenation for network inputs.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const int h = parts[0]->dim(0), w = parts[0]->dim(1);
  int c_total = 0;
  for (const auto* p : parts) {
    if (p->dim(0) != h || p->dim(1) != w) throw DimensionError("concat spatial mismatch");
    c_total += p->dim(2);
  }
  Tensor<T> out({h, w, c_total});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int co = 0;
      for (const auto* p : parts) {
        for (int c = 0; c < p->dim(2); ++c) out.at(y, x, co++) = p->at(y, x, c);
      }
    }
  }
  return out;
}

}  // namespace finet
