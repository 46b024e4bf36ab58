#pragma once

// Helpers shared between the unit tests and the acceptance suite.

#include <cstdint>

#include "finet/imageops.hpp"
#include "finet/netcore.hpp"
#include "finet/rng.hpp"
#include "finet/synthdata.hpp"
#include "finet/tensor.hpp"

namespace finet::testsupport {

// Zero-initialized biases leave fully dead pixels exactly on the relu
// kink, where central differences disagree with the subgradient. Kick
// every parameter off the kink before running finite differences.
template <typename T>
void jitter_params(ParamStore<T>& ps, std::uint64_t seed, double amp = 0.2) {
  Rng rng(seed);
  for (int i = 0; i < ps.count(); ++i) {
    auto& t = ps.value(i);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += static_cast<T>(rng.uniform(-amp, amp));
  }
}

// Sentinel RGB wherever the target garment's channel is set. The
// pipeline must never read these pixels when inpainting that category.
template <typename T>
Tensor<T> poison_appearance(const Tensor<T>& image, const Tensor<T>& seg, Category cat) {
  Tensor<T> out = image;
  const int ch = seg_channel(cat);
  for (int y = 0; y < image.dim(0); ++y) {
    for (int x = 0; x < image.dim(1); ++x) {
      if (seg.at(y, x, ch) > T(0.5)) {
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = T(5);
      }
    }
  }
  return out;
}

// Rewrite the target channel's interior with a checkerboard of
// background pixels. The channel's bounding box is preserved (edge
// pixels stay put), so the plausible region and all context inputs are
// unchanged; only the ground-truth garment shape differs.
template <typename T>
Tensor<T> poison_shape(const Tensor<T>& seg, Category cat, int* flipped = nullptr) {
  Tensor<T> out = seg;
  const int ch = seg_channel(cat);
  const Box b = bbox_of_channel(seg, ch);
  int count = 0;
  if (!b.empty()) {
    for (int y = b.y0 + 1; y < b.y1 - 1; ++y) {
      for (int x = b.x0 + 1; x < b.x1 - 1; ++x) {
        if (seg.at(y, x, ch) > T(0.5) && ((y + x) & 1) == 0) {
          out.at(y, x, ch) = T(0);
          out.at(y, x, kSegBackground) = T(1);
          ++count;
        }
      }
    }
  }
  if (flipped) *flipped = count;
  return out;
}

}  // namespace finet::testsupport
