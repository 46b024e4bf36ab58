#pragma once

#include <algorithm>
#include <vector>

#include "finet/tensor.hpp"

namespace finet {

// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct Box {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
  bool empty() const { return y1 <= y0 || x1 <= x0; }
  bool operator==(const Box&) const = default;
};

template <typename T>
Box bbox_of_channel(const Tensor<T>& map, int ch, T thresh = T(0.5)) {
  const int h = map.dim(0), w = map.dim(1);
  int y0 = h, x0 = w, y1 = 0, x1 = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (map.at(y, x, ch) > thresh) {
        y0 = std::min(y0, y);
        x0 = std::min(x0, x);
        y1 = std::max(y1, y + 1);
        x1 = std::max(x1, x + 1);
      }
    }
  }
  if (y1 <= y0) return Box{};
  return Box{y0, x0, y1, x1};
}

inline Box expand_clamped(Box b, int margin, int h, int w) {
  if (b.empty()) return b;
  return Box{std::max(0, b.y0 - margin), std::max(0, b.x0 - margin), std::min(h, b.y1 + margin),
             std::min(w, b.x1 + margin)};
}

template <typename T>
Tensor<T> crop(const Tensor<T>& src, const Box& b) {
  if (b.empty() || b.y0 < 0 || b.x0 < 0 || b.y1 > src.dim(0) || b.x1 > src.dim(1)) {
    throw DimensionError("crop box out of range");
  }
  const int c = src.dim(2);
  Tensor<T> out({b.height(), b.width(), c});
  for (int y = 0; y < b.height(); ++y) {
    for (int x = 0; x < b.width(); ++x) {
      for (int k = 0; k < c; ++k) out.at(y, x, k) = src.at(b.y0 + y, b.x0 + x, k);
    }
  }
  return out;
}

// Writes patch into dst at box position. Pixels outside the box are
// untouched, so compositing is bit-exact there.
template <typename T>
void paste(Tensor<T>& dst, const Tensor<T>& patch, const Box& b) {
  if (patch.dim(0) != b.height() || patch.dim(1) != b.width() || patch.dim(2) != dst.dim(2)) {
    throw DimensionError("paste patch does not match box");
  }
  if (b.y0 < 0 || b.x0 < 0 || b.y1 > dst.dim(0) || b.x1 > dst.dim(1)) {
    throw DimensionError("paste box out of range");
  }
  for (int y = 0; y < b.height(); ++y) {
    for (int x = 0; x < b.width(); ++x) {
      for (int k = 0; k < dst.dim(2); ++k) dst.at(b.y0 + y, b.x0 + x, k) = patch.at(y, x, k);
    }
  }
}

// Precomputed bilinear sampling weights for one axis, half-pixel-center
// convention: src = (dst + 0.5) * (n_src / n_dst) - 0.5, clamped.
template <typename T>
struct BilinearAxis {
  std::vector<int> lo, hi;
  std::vector<T> w_hi;  // weight of hi sample; lo gets 1 - w_hi
};

template <typename T>
BilinearAxis<T> bilinear_axis(int n_src, int n_dst) {
  BilinearAxis<T> ax;
  ax.lo.resize(n_dst);
  ax.hi.resize(n_dst);
  ax.w_hi.resize(n_dst);
  const double scale = static_cast<double>(n_src) / n_dst;
  for (int i = 0; i < n_dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    if (s < 0) s = 0;
    if (s > n_src - 1) s = n_src - 1;
    const int lo = static_cast<int>(s);
    ax.lo[i] = lo;
    ax.hi[i] = std::min(lo + 1, n_src - 1);
    ax.w_hi[i] = static_cast<T>(s - lo);
  }
  return ax;
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& src, int ho, int wo) {
  const int h = src.dim(0), w = src.dim(1), c = src.dim(2);
  if (h == ho && w == wo) return src;
  const auto ay = bilinear_axis<T>(h, ho);
  const auto ax = bilinear_axis<T>(w, wo);
  Tensor<T> out({ho, wo, c});
  for (int y = 0; y < ho; ++y) {
    const T wy = ay.w_hi[y];
    for (int x = 0; x < wo; ++x) {
      const T wx = ax.w_hi[x];
      for (int k = 0; k < c; ++k) {
        const T v00 = src.at(ay.lo[y], ax.lo[x], k);
        const T v01 = src.at(ay.lo[y], ax.hi[x], k);
        const T v10 = src.at(ay.hi[y], ax.lo[x], k);
        const T v11 = src.at(ay.hi[y], ax.hi[x], k);
        out.at(y, x, k) = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) + wy * ((T(1) - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

}  // namespace finet
