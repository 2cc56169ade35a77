// SPDX-License-Identifier: Apache-2.0
#include "leafbench/lpips.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

namespace {

FeatureMap run_stage(const ConvStage& stage, const FeatureMap& in) {
  FeatureMap out;
  out.channels = stage.out_channels;
  out.height = (in.height + 1) / 2;
  out.width = (in.width + 1) / 2;
  out.values.assign(static_cast<std::size_t>(out.channels) * out.height * out.width, 0.0);
  for (int o = 0; o < out.channels; ++o) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        double acc = stage.bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < in.channels; ++c) {
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = std::clamp(2 * y + ky - 1, 0, in.height - 1);
            for (int kx = 0; kx < 3; ++kx) {
              const int sx = std::clamp(2 * x + kx - 1, 0, in.width - 1);
              acc += stage.weights[((static_cast<std::size_t>(o) * in.channels + c) * 3 + ky) * 3 + kx] *
                     in.at(c, sy, sx);
            }
          }
        }
        out.values[(static_cast<std::size_t>(o) * out.height + y) * out.width + x] = std::max(acc, 0.0);
      }
    }
  }
  return out;
}

FeatureMap normalized(const FeatureMap& in) {
  FeatureMap out = in;
  const std::size_t plane = static_cast<std::size_t>(in.height) * in.width;
  for (std::size_t p = 0; p < plane; ++p) {
    double norm = 0.0;
    for (int c = 0; c < in.channels; ++c) norm += in.values[c * plane + p] * in.values[c * plane + p];
    if (norm == 0.0) continue;
    norm = std::sqrt(norm);
    for (int c = 0; c < in.channels; ++c) out.values[c * plane + p] /= norm;
  }
  return out;
}

}  // namespace

FeatureExtractor FeatureExtractor::seeded(std::uint64_t seed, int channels, int height, int width,
                                          std::vector<int> stage_widths) {
  if (stage_widths.size() < 3) throw Error(Errc::precondition, "the default extractor needs at least three stages");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ConvStage> stages;
  int in = channels;
  for (int out : stage_widths) {
    ConvStage s{in, out, {}, std::vector<double>(static_cast<std::size_t>(out), 0.0)};
    const double std = std::sqrt(2.0 / (in * 9.0));
    s.weights.resize(static_cast<std::size_t>(out) * in * 9);
    for (double& w : s.weights) w = std * normal(rng);
    stages.push_back(std::move(s));
    in = out;
  }
  return FeatureExtractor(channels, height, width, std::move(stages));
}

FeatureExtractor::FeatureExtractor(int channels, int height, int width, std::vector<ConvStage> stages,
                                   std::vector<double> layer_weights)
    : channels_(channels), height_(height), width_(width), stages_(std::move(stages)),
      layer_weights_(std::move(layer_weights)) {
  if (stages_.empty()) throw Error(Errc::precondition, "extractor needs at least one stage");
  int in = channels_;
  int h = height_;
  int w = width_;
  for (const auto& s : stages_) {
    if (s.in_channels != in || s.out_channels < 1 ||
        s.weights.size() != static_cast<std::size_t>(s.out_channels) * s.in_channels * 9 ||
        s.bias.size() != static_cast<std::size_t>(s.out_channels)) {
      throw Error(Errc::dimension_mismatch, "stage shapes do not chain");
    }
    if (h < 2 && w < 2) throw Error(Errc::precondition, "every stage must shrink the spatial extent");
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    in = s.out_channels;
  }
  if (layer_weights_.empty()) {
    layer_weights_.assign(stages_.size(), 1.0 / static_cast<double>(stages_.size()));
  }
  if (layer_weights_.size() != stages_.size()) throw Error(Errc::dimension_mismatch, "one weight per stage");
  double sum = 0.0;
  for (double lw : layer_weights_) {
    if (!(lw >= 0.0)) throw Error(Errc::invalid_range, "layer weights must be nonnegative");
    sum += lw;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(Errc::invalid_range, fmt::format("layer weights sum to {}", sum));
}

std::vector<FeatureMap> FeatureExtractor::extract(const ImageGrid& image) const {
  if (image.channels() != channels_ || image.height() != height_ || image.width() != width_) {
    throw Error(Errc::size_mismatch,
                fmt::format("extractor expects ({}, {}, {}), got ({}, {}, {})", channels_, height_, width_,
                            image.channels(), image.height(), image.width()));
  }
  FeatureMap current{channels_, height_, width_, {image.values().begin(), image.values().end()}};
  std::vector<FeatureMap> maps;
  maps.reserve(stages_.size());
  for (const auto& stage : stages_) {
    current = run_stage(stage, current);
    maps.push_back(normalized(current));
  }
  return maps;
}

double feature_distance(const FeatureExtractor& extractor, const std::vector<FeatureMap>& a,
                        const std::vector<FeatureMap>& b) {
  const auto& weights = extractor.layer_weights();
  if (a.size() != weights.size() || b.size() != weights.size()) {
    throw Error(Errc::size_mismatch, "feature stacks do not match the extractor");
  }
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].values.size() != b[l].values.size()) throw Error(Errc::size_mismatch, "feature maps differ in size");
    const std::size_t plane = static_cast<std::size_t>(a[l].height) * a[l].width;
    double sum = 0.0;
    for (std::size_t i = 0; i < a[l].values.size(); ++i) {
      const double d = a[l].values[i] - b[l].values[i];
      sum += d * d;
    }
    total += weights[l] * (sum / static_cast<double>(plane));
  }
  return std::clamp(total, 0.0, 1.0);
}

double lpips_score(const FeatureExtractor& extractor, const ImageGrid& a, const ImageGrid& b) {
  if (!a.same_shape(b)) throw Error(Errc::size_mismatch, "images differ in size");
  return feature_distance(extractor, extractor.extract(a), extractor.extract(b));
}

CorpusScore corpus_score(const FeatureExtractor& extractor, std::span<const ImageGrid> real,
                         std::span<const ImageGrid> synthetic) {
  if (real.empty() || synthetic.empty()) throw Error(Errc::empty_manifest, "both image sets must be nonempty");
  std::vector<std::vector<FeatureMap>> real_features;
  real_features.reserve(real.size());
  for (const auto& img : real) real_features.push_back(extractor.extract(img));

  CorpusScore result;
  double sum = 0.0;
  for (std::size_t s = 0; s < synthetic.size(); ++s) {
    const auto features = extractor.extract(synthetic[s]);
    PairScore best{s, 0, 2.0};
    for (std::size_t r = 0; r < real_features.size(); ++r) {
      const double d = feature_distance(extractor, features, real_features[r]);
      if (d < best.score) best = {s, r, d};
    }
    result.pairs.push_back(best);
    sum += best.score;
  }
  result.mean = sum / static_cast<double>(synthetic.size());
  return result;
}

CorpusScore corpus_score(const FeatureExtractor& extractor, const DatasetManifest& real,
                         const DatasetManifest& synthetic) {
  if (real.entries.empty() || synthetic.entries.empty()) {
    throw Error(Errc::empty_manifest, "both manifests must list at least one image");
  }
  const auto r = load_manifest_grids(real, extractor.width(), extractor.height());
  const auto s = load_manifest_grids(synthetic, extractor.width(), extractor.height());
  return corpus_score(extractor, r, s);
}

std::string format_score(double score) { return fmt::format("{:.2f}", score); }

std::string pair_scores_to_csv(const CorpusScore& score, const std::vector<std::string>& synthetic_names,
                               const std::vector<std::string>& real_names) {
  auto name = [](const std::vector<std::string>& names, std::size_t i) {
    return i < names.size() ? names[i] : std::to_string(i);
  };
  std::string out = "synthetic,real,score\n";
  for (const auto& p : score.pairs) {
    out += fmt::format("{},{},{}\n", name(synthetic_names, p.synthetic), name(real_names, p.real), p.score);
  }
  return out;
}

}  // namespace leafbench
