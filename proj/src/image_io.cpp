// SPDX-License-Identifier: Apache-2.0
#include "leafbench/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw Error(mode[0] == 'r' ? Errc::decode_failure : Errc::io_error,
                fmt::format("cannot open '{}'", path.string()));
  }
  return f;
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(Errc::decode_failure, fmt::format("'{}': {}", path.string(), image.message));
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::decode_failure, fmt::format("'{}': {}", path.string(), msg));
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

RgbImage read_jpeg(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  RgbImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(Errc::decode_failure, fmt::format("'{}': {}", path.string(), err.message));
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  std::array<unsigned char, 8> sig{};
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::decode_failure, fmt::format("cannot open '{}'", path.string()));
    in.read(reinterpret_cast<char*>(sig.data()), sig.size());
    if (in.gcount() < 3) throw Error(Errc::decode_failure, fmt::format("'{}' is too short", path.string()));
  }
  if (png_sig_cmp(sig.data(), 0, sig.size()) == 0) return read_png(path);
  if (sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  throw Error(Errc::decode_failure, fmt::format("'{}' is neither PNG nor JPEG", path.string()));
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw Error(Errc::shape_mismatch, "raster size does not match its dimensions");
  }
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(Errc::io_error, "libpng allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(Errc::io_error, fmt::format("failed encoding '{}'", path.string()));
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_ALL_FILTERS);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_BASE, PNG_FILTER_TYPE_BASE);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    auto* row = const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

CropWindow center_crop_window(int width, int height, int target_width, int target_height) {
  if (width <= 0 || height <= 0 || target_width <= 0 || target_height <= 0) {
    throw Error(Errc::invalid_range, "crop dimensions must be positive");
  }
  // Compare width/height with target_width/target_height without rounding.
  const long long lhs = static_cast<long long>(width) * target_height;
  const long long rhs = static_cast<long long>(height) * target_width;
  CropWindow w{0, 0, width, height};
  if (lhs > rhs) {
    w.width = static_cast<int>(std::llround(static_cast<double>(height) * target_width / target_height));
    w.x = (width - w.width) / 2;
  } else if (lhs < rhs) {
    w.height = static_cast<int>(std::llround(static_cast<double>(width) * target_height / target_width));
    w.y = (height - w.height) / 2;
  }
  return w;
}

RgbImage crop(const RgbImage& image, const CropWindow& window) {
  if (window.x < 0 || window.y < 0 || window.width <= 0 || window.height <= 0 ||
      window.x + window.width > image.width || window.y + window.height > image.height) {
    throw Error(Errc::invalid_range, "crop window outside the image");
  }
  RgbImage out{window.width, window.height, {}};
  out.pixels.resize(static_cast<std::size_t>(window.width) * window.height * 3);
  for (int y = 0; y < window.height; ++y) {
    const auto* src = image.pixels.data() + (static_cast<std::size_t>(window.y + y) * image.width + window.x) * 3;
    std::copy_n(src, static_cast<std::size_t>(window.width) * 3,
                out.pixels.data() + static_cast<std::size_t>(y) * window.width * 3);
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, int width, int height) {
  if (width <= 0 || height <= 0) throw Error(Errc::invalid_range, "resize target must be positive");
  if (width == image.width && height == image.height) return image;
  RgbImage out{width, height, {}};
  out.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c);
        const double bottom = (1.0 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround((1.0 - wy) * top + wy * bottom), 0L, 255L));
      }
    }
  }
  return out;
}

RgbImage fit_to(const RgbImage& image, int width, int height) {
  const CropWindow window = center_crop_window(image.width, image.height, width, height);
  if (window.width == image.width && window.height == image.height) return resize_bilinear(image, width, height);
  return resize_bilinear(crop(image, window), width, height);
}

ImageGrid to_grid(const RgbImage& image) {
  ImageGrid grid(3, image.height, image.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) grid.at(c, y, x) = image.at(x, y, c) / 127.5 - 1.0;
    }
  }
  return grid;
}

RgbImage from_grid(const ImageGrid& grid) {
  if (grid.channels() != 3) throw Error(Errc::shape_mismatch, "RGB export needs a 3-channel grid");
  RgbImage image{grid.width(), grid.height(), {}};
  image.pixels.resize(static_cast<std::size_t>(grid.width()) * grid.height() * 3);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < grid.height(); ++y) {
      for (int x = 0; x < grid.width(); ++x) {
        const long v = std::lround((grid.at(c, y, x) + 1.0) * 127.5);
        image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
      }
    }
  }
  return image;
}

}  // namespace leafbench
