// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "leafbench/dataset.hpp"
#include "leafbench/error.hpp"

namespace leafbench {

namespace fs = std::filesystem;

namespace {

struct Lesion {
  double x, y, r;
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

RgbImage synthetic_leaf(std::uint64_t seed, int width, int height) {
  if (width < 1 || height < 1) throw Error(Errc::invalid_range, "leaf image needs a positive size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);

  const double cx = 0.5 + 0.08 * (u(rng) - 0.5);
  const double cy = 0.5 + 0.08 * (u(rng) - 0.5);
  const double major = 0.38 + 0.08 * u(rng);
  const double minor = major * (0.45 + 0.15 * u(rng));
  const double angle = std::numbers::pi * u(rng);
  const double green[3] = {45 + 30 * u(rng), 120 + 40 * u(rng), 35 + 20 * u(rng)};
  const double soil[3] = {95 + 25 * u(rng), 70 + 15 * u(rng), 45 + 10 * u(rng)};

  std::vector<Lesion> lesions(2 + rng() % 4);
  for (auto& l : lesions) {
    // placed in leaf coordinates so they land on the blade
    const double a = 2 * std::numbers::pi * u(rng);
    const double rad = 0.7 * std::sqrt(u(rng));
    l = {rad * std::cos(a), rad * std::sin(a), 0.08 + 0.1 * u(rng)};
  }

  RgbImage img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = (x + 0.5) / width - cx;
      const double py = (y + 0.5) / height - cy;
      // leaf frame: u along the midrib, v across, both scaled to the blade
      const double lu = (px * ca + py * sa) / major;
      const double lv = (-px * sa + py * ca) / minor;
      const double grain = 6.0 * n(rng);
      double rgb[3];
      if (lu * lu + lv * lv > 1.0) {
        for (int c = 0; c < 3; ++c) rgb[c] = soil[c] + grain;
      } else {
        for (int c = 0; c < 3; ++c) rgb[c] = green[c] + grain;
        const double side = std::abs(std::fmod(lu + std::abs(lv) * 0.8 + 4.0, 0.35) - 0.175);
        if (std::abs(lv) < 0.06 || side < 0.025) {
          for (double& v : rgb) v *= 0.75;
        }
        for (const auto& l : lesions) {
          const double d = std::hypot(lu - l.x, lv - l.y);
          if (d < l.r) {
            rgb[0] = 85 + grain;
            rgb[1] = 50 + grain;
            rgb[2] = 25 + grain;
            break;
          }
          if (d < l.r * 1.6) {
            rgb[0] = 0.5 * rgb[0] + 100;
            rgb[1] = 0.5 * rgb[1] + 95;
            rgb[2] *= 0.6;
          }
        }
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = to_byte(rgb[c]);
    }
  }
  return img;
}

DatasetManifest write_synthetic_dataset(const fs::path& dir, int count, int width, int height, std::uint64_t seed,
                                        const std::string& class_label) {
  if (count < 1) throw Error(Errc::invalid_range, "synthetic dataset needs at least one image");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io_error, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  DatasetManifest manifest;
  manifest.target_width = width;
  manifest.target_height = height;
  manifest.crop = "watermelon";
  manifest.base_dir = dir;
  for (int i = 0; i < count; ++i) {
    const std::string name = fmt::format("leaf_{:03d}.png", i);
    write_png(dir / name, synthetic_leaf(seed + static_cast<std::uint64_t>(i), width, height));
    manifest.entries.push_back({name, class_label, ImageSource::field, View::canopy, width, height});
  }
  write_manifest(dir / kManifestFileName, manifest);
  return manifest;
}

}  // namespace leafbench
