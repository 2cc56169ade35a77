// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace leafbench {

/// Channel-major (C, H, W) image or latent. Data images live nominally in
/// [-1, 1]; noised grids are unbounded but always finite.
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(int channels, int height, int width);
  ImageGrid(int channels, int height, int width, std::vector<double> values);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values_[index(c, y, x)]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool same_shape(const ImageGrid& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  /// Throws Errc::non_finite if any element is NaN or infinite.
  void check_finite() const;

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

/// Throws Errc::shape_mismatch when the two grids differ in shape.
void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* what);

}  // namespace leafbench
