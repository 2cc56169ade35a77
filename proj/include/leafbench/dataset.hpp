// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "leafbench/image_grid.hpp"
#include "leafbench/image_io.hpp"

namespace leafbench {

enum class ImageSource { field, open_access };
enum class View { canopy, close_up, under_leaf, aerial };

std::string_view to_string(ImageSource s) noexcept;
std::string_view to_string(View v) noexcept;
std::optional<ImageSource> parse_source(std::string_view s) noexcept;
std::optional<View> parse_view(std::string_view s) noexcept;

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  std::string class_label;
  ImageSource source = ImageSource::field;
  View view = View::canopy;
  int width = 0;
  int height = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int target_width = 1024;
  int target_height = 1024;
  std::string crop;  // optional crop species tag, e.g. "watermelon"
  std::filesystem::path base_dir;  // where relative entry paths resolve; not serialized

  std::filesystem::path resolve(const ManifestEntry& entry) const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.entries == b.entries && a.target_width == b.target_width && a.target_height == b.target_height &&
           a.crop == b.crop;
  }
};

inline constexpr const char* kManifestFileName = "manifest.tsv";

/// Versioned tab-separated text: '#' metadata lines, then one record per
/// line with path, class, source, view, width, height.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

struct IngestOptions {
  std::string class_label;
  View view = View::canopy;
  ImageSource source = ImageSource::field;
  int target_width = 1024;
  int target_height = 1024;
  std::string crop;
};

struct DecodeFailure {
  std::filesystem::path path;
  std::string reason;
};

struct IngestResult {
  DatasetManifest manifest;
  std::vector<DecodeFailure> failures;
};

/// Center-crops and bilinear-scales every PNG/JPEG in source_dir (sorted by
/// name) to the target size, writes them as PNG into output_dir along with
/// manifest.tsv. Undecodable files are reported and skipped; a directory
/// with no decodable image throws Errc::empty_source. output_dir may equal
/// source_dir.
IngestResult ingest(const std::filesystem::path& source_dir, const std::filesystem::path& output_dir,
                    const IngestOptions& options);

enum class ViolationKind { mixed_class, mixed_view, cross_crop, missing_file };

std::string_view to_string(ViolationKind k) noexcept;

struct Violation {
  ViolationKind kind;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// Treats the given manifests as one training set and reports every
/// preparation-rule breach. Never throws; an empty result means compliant.
std::vector<Violation> lint_manifests(std::span<const DatasetManifest> manifests);
std::vector<Violation> lint_manifest(const DatasetManifest& manifest);

/// Loads every entry resized to width x height as [-1, 1] grids.
std::vector<ImageGrid> load_manifest_grids(const DatasetManifest& manifest, int width, int height);

/// Procedural stand-in for a field photo: a veined leaf on soil with
/// haloed lesions. Pose, colour and lesions vary with the seed.
RgbImage synthetic_leaf(std::uint64_t seed, int width, int height);

/// Writes count synthetic leaves as leaf_NNN.png plus manifest.tsv into dir.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir, int count, int width, int height,
                                        std::uint64_t seed, const std::string& class_label = "anthracnose");

}  // namespace leafbench
