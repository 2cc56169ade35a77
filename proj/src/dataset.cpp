// SPDX-License-Identifier: Apache-2.0
#include "leafbench/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "leafbench/error.hpp"
#include "leafbench/image_io.hpp"

namespace leafbench {

namespace fs = std::filesystem;

std::string_view to_string(ImageSource s) noexcept {
  return s == ImageSource::field ? "field" : "open-access";
}

std::string_view to_string(View v) noexcept {
  switch (v) {
    case View::canopy: return "canopy";
    case View::close_up: return "close-up";
    case View::under_leaf: return "under-leaf";
    case View::aerial: return "aerial";
  }
  return "?";
}

std::optional<ImageSource> parse_source(std::string_view s) noexcept {
  if (s == "field") return ImageSource::field;
  if (s == "open-access") return ImageSource::open_access;
  return std::nullopt;
}

std::optional<View> parse_view(std::string_view s) noexcept {
  for (View v : {View::canopy, View::close_up, View::under_leaf, View::aerial}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::string_view to_string(ViolationKind k) noexcept {
  switch (k) {
    case ViolationKind::mixed_class: return "mixed-class";
    case ViolationKind::mixed_view: return "mixed-view";
    case ViolationKind::cross_crop: return "cross-crop";
    case ViolationKind::missing_file: return "missing-file";
  }
  return "?";
}

fs::path DatasetManifest::resolve(const ManifestEntry& entry) const {
  const fs::path p(entry.path);
  return p.is_absolute() ? p : base_dir / p;
}

namespace {

constexpr const char* kManifestMagic = "# leafbench-manifest v1";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

int parse_dim(const std::string& s, int line_no) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::schema_mismatch, fmt::format("manifest line {}: bad dimension '{}'", line_no, s));
}

bool is_image_name(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, fmt::format("cannot write manifest '{}'", path.string()));
  out << kManifestMagic << '\n';
  out << "# target " << manifest.target_width << 'x' << manifest.target_height << '\n';
  if (!manifest.crop.empty()) out << "# crop " << manifest.crop << '\n';
  for (const auto& e : manifest.entries) {
    out << e.path << '\t' << e.class_label << '\t' << to_string(e.source) << '\t' << to_string(e.view) << '\t'
        << e.width << '\t' << e.height << '\n';
  }
  if (!out) throw Error(Errc::io_error, fmt::format("failed writing manifest '{}'", path.string()));
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open manifest '{}'", path.string()));
  DatasetManifest manifest;
  manifest.base_dir = path.parent_path();
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line) || line != kManifestMagic) {
    throw Error(Errc::schema_mismatch, fmt::format("'{}' is not a v1 manifest", path.string()));
  }
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.starts_with("# target ")) {
      const auto spec = line.substr(9);
      const auto x = spec.find('x');
      if (x == std::string::npos) throw Error(Errc::schema_mismatch, fmt::format("bad target line '{}'", line));
      manifest.target_width = parse_dim(spec.substr(0, x), line_no);
      manifest.target_height = parse_dim(spec.substr(x + 1), line_no);
      continue;
    }
    if (line.starts_with("# crop ")) {
      manifest.crop = line.substr(7);
      continue;
    }
    if (line.front() == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 6) {
      throw Error(Errc::schema_mismatch, fmt::format("manifest line {}: expected 6 fields, got {}", line_no, f.size()));
    }
    const auto source = parse_source(f[2]);
    const auto view = parse_view(f[3]);
    if (!source || !view || f[0].empty() || f[1].empty()) {
      throw Error(Errc::schema_mismatch, fmt::format("manifest line {}: bad record '{}'", line_no, line));
    }
    manifest.entries.push_back({f[0], f[1], *source, *view, parse_dim(f[4], line_no), parse_dim(f[5], line_no)});
  }
  return manifest;
}

IngestResult ingest(const fs::path& source_dir, const fs::path& output_dir, const IngestOptions& options) {
  if (options.class_label.empty()) throw Error(Errc::precondition, "class label must be nonempty");
  if (options.target_width <= 0 || options.target_height <= 0) {
    throw Error(Errc::invalid_range, "target resolution must be positive");
  }
  if (!fs::is_directory(source_dir)) {
    throw Error(Errc::empty_source, fmt::format("'{}' is not a directory", source_dir.string()));
  }
  std::vector<fs::path> candidates;
  for (const auto& item : fs::directory_iterator(source_dir)) {
    if (item.is_regular_file() && is_image_name(item.path())) candidates.push_back(item.path());
  }
  std::sort(candidates.begin(), candidates.end());

  // Decode everything first: when ingesting in place, outputs overwrite inputs.
  struct Prepared {
    std::string name;
    RgbImage image;
  };
  std::vector<Prepared> prepared;
  IngestResult result;
  std::set<std::string> names;
  for (const auto& path : candidates) {
    RgbImage image;
    try {
      image = read_image(path);
    } catch (const Error& e) {
      result.failures.push_back({path, e.what()});
      continue;
    }
    std::string name = path.stem().string() + ".png";
    if (names.contains(name)) {
      std::string ext = path.extension().string();
      if (!ext.empty()) ext.erase(0, 1);
      name = path.stem().string() + "-" + ext + ".png";
    }
    names.insert(name);
    prepared.push_back({std::move(name), fit_to(image, options.target_width, options.target_height)});
  }
  if (prepared.empty()) {
    std::string detail;
    for (const auto& f : result.failures) detail += "\n  " + f.reason;
    throw Error(Errc::empty_source, fmt::format("no decodable image in '{}'{}", source_dir.string(), detail));
  }

  fs::create_directories(output_dir);
  DatasetManifest& manifest = result.manifest;
  manifest.target_width = options.target_width;
  manifest.target_height = options.target_height;
  manifest.crop = options.crop;
  manifest.base_dir = output_dir;
  for (const auto& p : prepared) {
    write_png(output_dir / p.name, p.image);
    manifest.entries.push_back(
        {p.name, options.class_label, options.source, options.view, p.image.width, p.image.height});
  }
  write_manifest(output_dir / kManifestFileName, manifest);
  return result;
}

std::vector<Violation> lint_manifests(std::span<const DatasetManifest> manifests) {
  std::vector<Violation> out;
  std::set<std::string> classes;
  std::set<std::string> views;
  std::set<std::string> crops;
  std::set<std::string> missing;
  for (const auto& m : manifests) {
    if (!m.crop.empty()) crops.insert(m.crop);
    for (const auto& e : m.entries) {
      classes.insert(e.class_label);
      views.insert(std::string(to_string(e.view)));
      std::error_code ec;
      if (!fs::is_regular_file(m.resolve(e), ec)) missing.insert(m.resolve(e).string());
    }
  }
  auto join = [](const std::set<std::string>& items) {
    std::string s;
    for (const auto& i : items) s += (s.empty() ? "" : ", ") + i;
    return s;
  };
  if (classes.size() > 1) {
    out.push_back({ViolationKind::mixed_class,
                   fmt::format("training set mixes disease classes: {}", join(classes))});
  }
  if (views.size() > 1) {
    out.push_back({ViolationKind::mixed_view, fmt::format("training set mixes views: {}", join(views))});
  }
  if (crops.size() > 1) {
    out.push_back({ViolationKind::cross_crop, fmt::format("training set mixes crops: {}", join(crops))});
  }
  for (const auto& path : missing) {
    out.push_back({ViolationKind::missing_file, fmt::format("referenced file not found: {}", path)});
  }
  return out;
}

std::vector<Violation> lint_manifest(const DatasetManifest& manifest) {
  return lint_manifests(std::span<const DatasetManifest>(&manifest, 1));
}

std::vector<ImageGrid> load_manifest_grids(const DatasetManifest& manifest, int width, int height) {
  std::vector<ImageGrid> grids;
  grids.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) grids.push_back(to_grid(fit_to(read_image(manifest.resolve(e)), width, height)));
  return grids;
}

}  // namespace leafbench
