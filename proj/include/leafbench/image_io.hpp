// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "leafbench/image_grid.hpp"

namespace leafbench {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// PNG or JPEG, detected from the file signature. Gray, palette, alpha and
/// 16-bit PNGs are converted to 8-bit RGB. Throws Errc::decode_failure.
RgbImage read_image(const std::filesystem::path& path);

/// Lossless PNG with fixed encoder settings, so equal rasters give equal bytes.
void write_png(const std::filesystem::path& path, const RgbImage& image);

struct CropWindow {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

/// Largest centered window of the target aspect ratio inside width x height.
CropWindow center_crop_window(int width, int height, int target_width, int target_height);

RgbImage crop(const RgbImage& image, const CropWindow& window);

/// Bilinear resampling with pixel-center alignment; same size is a copy.
RgbImage resize_bilinear(const RgbImage& image, int width, int height);

/// Center-crop to the target aspect ratio, then scale to the target size.
RgbImage fit_to(const RgbImage& image, int width, int height);

/// [0, 255] -> [-1, 1], channel-major.
ImageGrid to_grid(const RgbImage& image);

/// [-1, 1] -> [0, 255], rounding and clamping.
RgbImage from_grid(const ImageGrid& grid);

}  // namespace leafbench
