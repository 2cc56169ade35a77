// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>

#include "leafbench/denoiser.hpp"
#include "leafbench/schedule.hpp"
#include "leafbench/train.hpp"

namespace leafbench {

struct Checkpoint {
  Denoiser model;
  NoiseSchedule schedule;
  TrainConfig config;
};

inline constexpr int kCheckpointVersion = 1;

/// Text container, one value per line; reals are written as hex floats so a
/// save/load round trip is exact. Adapters go in per-projection sections.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace leafbench
