// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "leafbench/dataset.hpp"
#include "leafbench/image_grid.hpp"

namespace leafbench {

/// 3x3, stride-2 convolution with edge-replicating padding followed by ReLU.
struct ConvStage {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weights;  // out x in x 3 x 3
  std::vector<double> bias;     // out
};

struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // channel-major

  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

inline constexpr std::uint64_t kDefaultExtractorSeed = 0x4c50495053ULL;

/// Fixed random-convolution stand-in for a pretrained backbone. Features are
/// compared after unit-normalizing the channel vector at each position.
class FeatureExtractor {
 public:
  /// He-initialized stages from a seed; at least three stages.
  static FeatureExtractor seeded(std::uint64_t seed = kDefaultExtractorSeed, int channels = 3, int height = 32,
                                 int width = 32, std::vector<int> stage_widths = {16, 32, 64});

  /// Explicit stages; layer weights must be nonnegative and sum to 1
  /// (empty means uniform).
  FeatureExtractor(int channels, int height, int width, std::vector<ConvStage> stages,
                   std::vector<double> layer_weights = {});

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const std::vector<ConvStage>& stages() const noexcept { return stages_; }
  const std::vector<double>& layer_weights() const noexcept { return layer_weights_; }

  /// One unit-normalized map per stage. Errc::size_mismatch on a wrong size.
  std::vector<FeatureMap> extract(const ImageGrid& image) const;

 private:
  int channels_;
  int height_;
  int width_;
  std::vector<ConvStage> stages_;
  std::vector<double> layer_weights_;
};

/// Weighted distance between two sets of normalized features, clamped to [0, 1].
double feature_distance(const FeatureExtractor& extractor, const std::vector<FeatureMap>& a,
                        const std::vector<FeatureMap>& b);

/// sum_l w_l * mean over positions of |f_a - f_b|^2, clamped to [0, 1].
double lpips_score(const FeatureExtractor& extractor, const ImageGrid& a, const ImageGrid& b);

struct PairScore {
  std::size_t synthetic = 0;
  std::size_t real = 0;
  double score = 0.0;
};

struct CorpusScore {
  double mean = 0.0;
  std::vector<PairScore> pairs;
};

/// Each synthetic image is paired with its nearest real image under the
/// same metric (lowest index on ties); the corpus score is the mean.
CorpusScore corpus_score(const FeatureExtractor& extractor, std::span<const ImageGrid> real,
                         std::span<const ImageGrid> synthetic);

/// Loads both manifests at the extractor's input size first.
CorpusScore corpus_score(const FeatureExtractor& extractor, const DatasetManifest& real,
                         const DatasetManifest& synthetic);

/// Two-decimal display form used in reports.
std::string format_score(double score);

/// "synthetic,real,score" rows; names come from the manifests when given.
std::string pair_scores_to_csv(const CorpusScore& score, const std::vector<std::string>& synthetic_names = {},
                               const std::vector<std::string>& real_names = {});

}  // namespace leafbench
