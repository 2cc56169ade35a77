// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "leafbench/error.hpp"

namespace leafbench {

enum class WorkloadPhase { training, inference };

std::string_view to_string(WorkloadPhase p) noexcept;
std::optional<WorkloadPhase> parse_phase(std::string_view s) noexcept;

/// One reading as reported by the management interface.
struct BackendReading {
  long memory_mib = 0;
  double power_w = 0.0;
  int gpu_util_pct = 0;

  friend bool operator==(const BackendReading&, const BackendReading&) = default;
};

struct TelemetrySample {
  double elapsed_s = 0.0;
  std::string timestamp_utc;
  long memory_mib = 0;
  double power_w = 0.0;
  int gpu_util_pct = 0;

  friend bool operator==(const TelemetrySample&, const TelemetrySample&) = default;
};

inline constexpr double kMaxPowerWatts = 2000.0;
inline constexpr double kMinSampleInterval = 0.1;

struct Trace {
  std::string label;
  double interval_s = 1.0;
  WorkloadPhase phase = WorkloadPhase::training;
  std::vector<TelemetrySample> samples;
  /// Nominal elapsed times of ticks whose read failed or was skipped.
  std::vector<double> gaps;

  /// Throws Errc::precondition naming the first broken invariant.
  void validate() const;
};

/// Raised for an unparseable backend line; the line is kept verbatim.
class BackendParseError : public Error {
 public:
  BackendParseError(std::string line, const std::string& why)
      : Error(Errc::parse_error, why + ": \"" + line + "\""), line_(std::move(line)) {}
  const std::string& line() const noexcept { return line_; }

 private:
  std::string line_;
};

/// Parses "memory.used, power.draw, utilization.gpu" as printed by the
/// query interface in CSV mode, with or without unit suffixes.
BackendReading parse_backend_line(std::string_view raw);

class TelemetryBackend {
 public:
  virtual ~TelemetryBackend() = default;
  /// Throws Errc::backend_unavailable if the source cannot be reached.
  virtual void probe() {}
  /// One reading; any exception is recorded by the sampler as a gap.
  virtual BackendReading read() = 0;
  virtual std::string name() const = 0;
};

/// Queries the NVIDIA management command once per read.
class NvidiaSmiBackend : public TelemetryBackend {
 public:
  explicit NvidiaSmiBackend(int gpu_index = 0, std::string executable = "nvidia-smi", double timeout_s = 5.0);
  void probe() override;
  BackendReading read() override;
  std::string name() const override { return "nvidia-smi"; }
  std::string command() const;

 private:
  int gpu_index_;
  std::string executable_;
  double timeout_s_;
};

/// Replays scripted readings in call order, holding the last one after the
/// script runs out. An empty optional in the script makes that read fail.
class ScriptedBackend : public TelemetryBackend {
 public:
  explicit ScriptedBackend(std::vector<std::optional<BackendReading>> script);
  static std::shared_ptr<ScriptedBackend> constant(BackendReading reading);
  /// Replays the readings of a trace CSV.
  static std::shared_ptr<ScriptedBackend> from_trace_file(const std::filesystem::path& path);

  BackendReading read() override;
  std::string name() const override { return "synthetic"; }
  std::size_t reads() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::optional<BackendReading>> script_;
  std::size_t next_ = 0;
};

/// Time source for the sampler, in seconds.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
  /// Blocks until now() >= t (true) or stop is requested first (false).
  virtual bool wait_until(double t, std::stop_token stop) = 0;
  /// Virtual clocks stamp samples with their nominal tick time.
  virtual bool is_virtual() const { return false; }
};

class SteadyClock : public Clock {
 public:
  SteadyClock();
  double now() const override;
  bool wait_until(double t, std::stop_token stop) override;

 private:
  std::chrono::steady_clock::time_point origin_;
  std::mutex mutex_;
  std::condition_variable_any cv_;
};

/// Simulated time advanced explicitly by the workload. wait_until(t) returns
/// once time is strictly past t, so a run advanced by D seconds yields
/// exactly ceil(D / interval) ticks regardless of thread timing.
class VirtualClock : public Clock {
 public:
  double now() const override;
  bool wait_until(double t, std::stop_token stop) override;
  bool is_virtual() const override { return true; }
  void advance(double seconds);

 private:
  mutable std::mutex mutex_;
  std::condition_variable_any cv_;
  double now_ = 0.0;
};

struct SamplerOptions {
  double interval_s = 1.0;
  std::string label;
  WorkloadPhase phase = WorkloadPhase::training;
  /// When set, every sample is also appended to this CSV as it arrives, so a
  /// killed process still leaves a readable partial trace.
  std::optional<std::filesystem::path> stream_to;
};

/// A running sampling thread. Move-only; stop() exactly once.
class SamplerHandle {
 public:
  SamplerHandle(SamplerHandle&&) noexcept;
  SamplerHandle& operator=(SamplerHandle&&) noexcept;
  ~SamplerHandle();

  bool active() const noexcept;
  std::size_t sample_count() const;
  Trace snapshot() const;
  /// Ends sampling and returns the validated trace; Errc::double_stop after
  /// the first call.
  Trace stop();

 private:
  friend SamplerHandle start_sampler(std::shared_ptr<TelemetryBackend>, const SamplerOptions&,
                                     std::shared_ptr<Clock>);
  struct State;
  explicit SamplerHandle(std::unique_ptr<State> state);
  std::unique_ptr<State> state_;
};

/// Probes the backend (Errc::backend_unavailable) and starts sampling on a
/// separate thread. The first sample is taken at elapsed 0. Requires an
/// interval of at least 0.1 s (Errc::precondition).
SamplerHandle start_sampler(std::shared_ptr<TelemetryBackend> backend, const SamplerOptions& options,
                            std::shared_ptr<Clock> clock = nullptr);

Trace stop_sampler(SamplerHandle& handle);

inline constexpr const char* kTraceCsvHeader = "elapsed_s,timestamp_utc,memory_mib,power_w,gpu_util_pct";

std::string format_trace_row(const TelemetrySample& s);
std::string trace_to_csv(const Trace& trace);
void write_csv(const Trace& trace, const std::filesystem::path& path);
/// Reads samples back; gaps are inferred from jumps of two or more intervals.
Trace read_csv(const std::filesystem::path& path, double interval_s = 1.0);
Trace parse_trace_csv(std::string_view text, double interval_s = 1.0);

/// ISO-8601 UTC with milliseconds, e.g. 2026-01-02T03:04:05.678Z.
std::string format_utc(std::chrono::system_clock::time_point t);

}  // namespace leafbench
