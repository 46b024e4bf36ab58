#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "finet/container.hpp"
#include "finet/synthdata.hpp"

namespace finet {

// Colors for segmentation visualization: body channels reuse the
// renderer's reference colors, garment channels get saturated primaries
// so the layout reads at a glance.
inline constexpr double kSegPalette[kSegChannels][3] = {
    {kFaceRgb[0], kFaceRgb[1], kFaceRgb[2]},
    {kUpperSkinRgb[0], kUpperSkinRgb[1], kUpperSkinRgb[2]},
    {kLowerSkinRgb[0], kLowerSkinRgb[1], kLowerSkinRgb[2]},
    {0.85, 0.20, 0.20},  // hat
    {0.20, 0.45, 0.85},  // top
    {0.20, 0.70, 0.30},  // bottom
    {0.85, 0.70, 0.15},  // shoes
    {kBackgroundRgb[0], kBackgroundRgb[1], kBackgroundRgb[2]},
};

// Renders a one-hot (or soft) segmentation map as RGB in [-1, 1] by
// blending the palette with the channel weights.
template <typename T>
Tensor<T> colorize_seg(const Tensor<T>& seg) {
  const int h = seg.dim(0), w = seg.dim(1);
  Tensor<T> out({h, w, 3});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double rgb[3] = {0, 0, 0};
      for (int c = 0; c < kSegChannels; ++c) {
        const double wgt = static_cast<double>(seg.at(y, x, c));
        for (int k = 0; k < 3; ++k) rgb[k] += wgt * kSegPalette[c][k];
      }
      for (int k = 0; k < 3; ++k) out.at(y, x, k) = static_cast<T>(2 * rgb[k] - 1);
    }
  }
  return out;
}

// Writes an H x W x 3 image with values in [-1, 1] as binary PPM (P6).
template <typename T>
void write_ppm(const std::filesystem::path& path, const Tensor<T>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("write_ppm expects an HxWx3 image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open image for writing: " + path.string());
  out << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(image.dim(1)) * 3);
  for (int y = 0; y < image.dim(0); ++y) {
    for (int x = 0; x < image.dim(1); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = (static_cast<double>(image.at(y, x, c)) + 1.0) / 2.0;
        const double clamped = std::clamp(v, 0.0, 1.0);
        row[static_cast<std::size_t>(x) * 3 + c] = static_cast<unsigned char>(clamped * 255.0 + 0.5);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  out.close();
  if (!out) throw IoError("failed writing image " + path.string());
}

// Lays out equally sized tiles row-major into one image with a 2-pixel
// separator, for sweep grids and sample sheets.
template <typename T>
Tensor<T> tile_grid(const std::vector<Tensor<T>>& tiles, int cols) {
  if (tiles.empty()) throw ContractError("tile_grid needs at least one tile");
  if (cols <= 0) throw ContractError("tile_grid needs a positive column count");
  const int th = tiles[0].dim(0), tw = tiles[0].dim(1);
  for (const auto& t : tiles) {
    if (t.rank() != 3 || t.dim(0) != th || t.dim(1) != tw || t.dim(2) != 3) {
      throw DimensionError("tile_grid tiles must share one HxWx3 shape");
    }
  }
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  constexpr int kSep = 2;
  Tensor<T> out({rows * th + (rows - 1) * kSep, cols * tw + (cols - 1) * kSep, 3});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1);  // white separators
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
    const int oy = r * (th + kSep), ox = c * (tw + kSep);
    for (int y = 0; y < th; ++y) {
      for (int x = 0; x < tw; ++x) {
        for (int k = 0; k < 3; ++k) out.at(oy + y, ox + x, k) = tiles[i].at(y, x, k);
      }
    }
  }
  return out;
}

}  // namespace finet
