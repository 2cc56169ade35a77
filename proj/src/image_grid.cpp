// SPDX-License-Identifier: Apache-2.0
#include "leafbench/image_grid.hpp"

#include <cmath>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

ImageGrid::ImageGrid(int channels, int height, int width)
    : ImageGrid(channels, height, width,
                std::vector<double>(static_cast<std::size_t>(channels > 0 ? channels : 0) *
                                    (height > 0 ? height : 0) * (width > 0 ? width : 0))) {}

ImageGrid::ImageGrid(int channels, int height, int width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw Error(Errc::shape_mismatch,
                fmt::format("grid extents must be positive, got ({}, {}, {})", channels, height, width));
  }
  const auto expected = static_cast<std::size_t>(channels) * height * width;
  if (values_.size() != expected) {
    throw Error(Errc::shape_mismatch,
                fmt::format("grid ({}, {}, {}) needs {} values, got {}", channels, height, width,
                            expected, values_.size()));
  }
  check_finite();
}

void ImageGrid::check_finite() const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(Errc::non_finite, fmt::format("non-finite value at flat index {}", i));
    }
  }
}

void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(Errc::shape_mismatch,
                fmt::format("{}: ({}, {}, {}) vs ({}, {}, {})", what, a.channels(), a.height(),
                            a.width(), b.channels(), b.height(), b.width()));
  }
}

}  // namespace leafbench
