// SPDX-License-Identifier: Apache-2.0
#include "leafbench/telemetry.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <fmt/format.h>

namespace leafbench {

std::string_view to_string(WorkloadPhase p) noexcept {
  return p == WorkloadPhase::training ? "training" : "inference";
}

std::optional<WorkloadPhase> parse_phase(std::string_view s) noexcept {
  if (s == "training") return WorkloadPhase::training;
  if (s == "inference") return WorkloadPhase::inference;
  return std::nullopt;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  for (;;) {
    const auto at = s.find(sep);
    parts.push_back(s.substr(0, at));
    if (at == std::string_view::npos) break;
    s.remove_prefix(at + 1);
  }
  return parts;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) return std::nullopt;
  }
  return value;
}

std::string_view strip_unit(std::string_view field, std::string_view unit) {
  field = trim(field);
  if (field.size() >= unit.size() && field.substr(field.size() - unit.size()) == unit) {
    field.remove_suffix(unit.size());
  }
  return trim(field);
}

bool valid_reading(const BackendReading& r) {
  return r.memory_mib >= 0 && r.power_w >= 0.0 && r.power_w < kMaxPowerWatts && r.gpu_util_pct >= 0 &&
         r.gpu_util_pct <= 100;
}

}  // namespace

BackendReading parse_backend_line(std::string_view raw) {
  const std::string line(raw);
  const auto fields = split(trim(raw), ',');
  if (fields.size() != 3) throw BackendParseError(line, fmt::format("expected 3 fields, got {}", fields.size()));
  const auto memory = parse_number<long>(strip_unit(fields[0], "MiB"));
  const auto power = parse_number<double>(strip_unit(fields[1], "W"));
  const auto util = parse_number<int>(strip_unit(fields[2], "%"));
  if (!memory) throw BackendParseError(line, "unreadable memory.used");
  if (!power) throw BackendParseError(line, "unreadable power.draw");
  if (!util) throw BackendParseError(line, "unreadable utilization.gpu");
  BackendReading r{*memory, *power, *util};
  if (!valid_reading(r)) throw BackendParseError(line, "reading outside the plausible range");
  return r;
}

void Trace::validate() const {
  auto fail = [this](const std::string& why) {
    throw Error(Errc::precondition, fmt::format("trace '{}': {}", label, why));
  };
  if (!(interval_s > 0.0)) fail("interval must be positive");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!(s.elapsed_s >= 0.0)) fail(fmt::format("sample {} has negative elapsed time", i));
    if (i > 0 && !(s.elapsed_s > samples[i - 1].elapsed_s)) {
      fail(fmt::format("elapsed time not strictly increasing at sample {}", i));
    }
    if (!valid_reading({s.memory_mib, s.power_w, s.gpu_util_pct})) fail(fmt::format("sample {} out of range", i));
  }
  if (samples.size() < 2) return;
  // A jump of n intervals is a marked gap; anything else off-grid is jitter.
  std::size_t irregular = 0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double d = samples[i].elapsed_s - samples[i - 1].elapsed_s;
    const double n = std::max(1.0, std::round(d / interval_s));
    if (std::abs(d - n * interval_s) >= 0.5 * interval_s) ++irregular;
  }
  const auto gaps_total = samples.size() - 1;
  if (static_cast<double>(irregular) > 0.01 * static_cast<double>(gaps_total)) {
    fail(fmt::format("{} of {} sample gaps stray from the {} s grid", irregular, gaps_total, interval_s));
  }
}

// ---------------------------------------------------------------------------
// Backends

NvidiaSmiBackend::NvidiaSmiBackend(int gpu_index, std::string executable, double timeout_s)
    : gpu_index_(gpu_index), executable_(std::move(executable)), timeout_s_(timeout_s) {}

std::string NvidiaSmiBackend::command() const {
  return fmt::format(
      "timeout {} {} --query-gpu=memory.used,power.draw,utilization.gpu --format=csv,noheader -i {} 2>/dev/null",
      timeout_s_, executable_, gpu_index_);
}

BackendReading NvidiaSmiBackend::read() {
  std::FILE* pipe = ::popen(command().c_str(), "r");
  if (!pipe) throw Error(Errc::backend_unavailable, "cannot spawn the management command");
  std::string output;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) output += buf;
  const int status = ::pclose(pipe);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error(Errc::backend_unavailable, fmt::format("'{}' failed", executable_));
  }
  const auto newline = output.find('\n');
  return parse_backend_line(output.substr(0, newline));
}

void NvidiaSmiBackend::probe() {
  try {
    read();
  } catch (const Error& e) {
    if (e.code() == Errc::backend_unavailable) throw;
    throw Error(Errc::backend_unavailable, e.what());
  } catch (const std::exception& e) {
    throw Error(Errc::backend_unavailable, e.what());
  }
}

ScriptedBackend::ScriptedBackend(std::vector<std::optional<BackendReading>> script) : script_(std::move(script)) {
  if (script_.empty()) throw Error(Errc::precondition, "scripted backend needs at least one reading");
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::constant(BackendReading reading) {
  return std::make_shared<ScriptedBackend>(std::vector<std::optional<BackendReading>>{reading});
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_trace_file(const std::filesystem::path& path) {
  const Trace trace = read_csv(path);
  std::vector<std::optional<BackendReading>> script;
  for (const auto& s : trace.samples) script.emplace_back(BackendReading{s.memory_mib, s.power_w, s.gpu_util_pct});
  if (script.empty()) throw Error(Errc::precondition, fmt::format("'{}' holds no samples", path.string()));
  return std::make_shared<ScriptedBackend>(std::move(script));
}

BackendReading ScriptedBackend::read() {
  std::lock_guard lock(mutex_);
  const std::size_t at = std::min(next_, script_.size() - 1);
  ++next_;
  if (!script_[at]) throw Error(Errc::backend_unavailable, fmt::format("scripted failure at read {}", at));
  return *script_[at];
}

std::size_t ScriptedBackend::reads() const {
  std::lock_guard lock(mutex_);
  return next_;
}

// ---------------------------------------------------------------------------
// Clocks

SteadyClock::SteadyClock() : origin_(std::chrono::steady_clock::now()) {}

double SteadyClock::now() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count();
}

bool SteadyClock::wait_until(double t, std::stop_token stop) {
  const auto deadline = origin_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                      std::chrono::duration<double>(t));
  std::unique_lock lock(mutex_);
  for (;;) {
    if (now() >= t) return true;
    if (stop.stop_requested()) return false;
    cv_.wait_until(lock, stop, deadline, [] { return false; });
  }
}

double VirtualClock::now() const {
  std::lock_guard lock(mutex_);
  return now_;
}

bool VirtualClock::wait_until(double t, std::stop_token stop) {
  std::unique_lock lock(mutex_);
  // Strict: a tick is read only once the workload has moved past it, so the
  // tick at the instant of stop is never raced against the stop request.
  cv_.wait(lock, stop, [&] { return now_ > t; });
  return now_ > t;
}

void VirtualClock::advance(double seconds) {
  {
    std::lock_guard lock(mutex_);
    now_ += seconds;
  }
  cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Sampler

std::string format_utc(std::chrono::system_clock::time_point t) {
  using namespace std::chrono;
  const auto ms = duration_cast<milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
}

struct SamplerHandle::State {
  std::shared_ptr<TelemetryBackend> backend;
  std::shared_ptr<Clock> clock;
  SamplerOptions options;
  std::chrono::system_clock::time_point start_utc;
  double start = 0.0;  // clock reading at start_sampler, not at thread launch

  mutable std::mutex mutex;
  Trace trace;
  std::ofstream stream;
  bool stopped = false;
  std::jthread thread;

  void record(TelemetrySample sample) {
    std::lock_guard lock(mutex);
    if (stream.is_open()) stream << format_trace_row(sample) << std::flush;
    trace.samples.push_back(std::move(sample));
  }

  void record_gap(double nominal) {
    std::lock_guard lock(mutex);
    trace.gaps.push_back(nominal);
  }

  void run(std::stop_token stop) {
    const double interval = options.interval_s;
    long tick = 0;
    while (clock->wait_until(start + static_cast<double>(tick) * interval, stop)) {
      const double nominal = static_cast<double>(tick) * interval;
      const double woke = clock->now() - start;
      try {
        const BackendReading r = backend->read();
        if (!valid_reading(r)) throw Error(Errc::parse_error, "reading out of range");
        const double elapsed = clock->is_virtual() ? nominal : woke;
        const auto stamp = start_utc + std::chrono::duration_cast<std::chrono::system_clock::duration>(
                                           std::chrono::duration<double>(elapsed));
        record({elapsed, format_utc(stamp), r.memory_mib, r.power_w, r.gpu_util_pct});
      } catch (const std::exception&) {
        record_gap(nominal);
      }
      ++tick;
      if (clock->is_virtual()) continue;
      // A stalled read drops the ticks it overran instead of bunching them up.
      const double after = clock->now() - start;
      while ((static_cast<double>(tick) + 0.5) * interval < after) {
        record_gap(static_cast<double>(tick) * interval);
        ++tick;
      }
    }
  }
};

SamplerHandle::SamplerHandle(std::unique_ptr<State> state) : state_(std::move(state)) {}
SamplerHandle::SamplerHandle(SamplerHandle&&) noexcept = default;
SamplerHandle& SamplerHandle::operator=(SamplerHandle&&) noexcept = default;
SamplerHandle::~SamplerHandle() = default;  // jthread requests stop and joins

bool SamplerHandle::active() const noexcept { return state_ && !state_->stopped; }

std::size_t SamplerHandle::sample_count() const {
  std::lock_guard lock(state_->mutex);
  return state_->trace.samples.size();
}

Trace SamplerHandle::snapshot() const {
  std::lock_guard lock(state_->mutex);
  return state_->trace;
}

Trace SamplerHandle::stop() {
  if (!state_ || state_->stopped) throw Error(Errc::double_stop, "sampler already stopped");
  state_->thread.request_stop();
  if (state_->thread.joinable()) state_->thread.join();
  state_->stopped = true;
  if (state_->stream.is_open()) state_->stream.close();
  Trace trace = std::move(state_->trace);
  trace.validate();
  return trace;
}

SamplerHandle start_sampler(std::shared_ptr<TelemetryBackend> backend, const SamplerOptions& options,
                            std::shared_ptr<Clock> clock) {
  if (!(options.interval_s >= kMinSampleInterval)) {
    throw Error(Errc::precondition,
                fmt::format("sample interval {} s is below the {} s minimum", options.interval_s, kMinSampleInterval));
  }
  if (!backend) throw Error(Errc::backend_unavailable, "no telemetry backend");
  backend->probe();
  auto state = std::make_unique<SamplerHandle::State>();
  state->backend = std::move(backend);
  state->clock = clock ? std::move(clock) : std::make_shared<SteadyClock>();
  state->options = options;
  state->start_utc = std::chrono::system_clock::now();
  state->start = state->clock->now();
  state->trace.label = options.label;
  state->trace.interval_s = options.interval_s;
  state->trace.phase = options.phase;
  if (options.stream_to) {
    state->stream.open(*options.stream_to, std::ios::binary | std::ios::trunc);
    if (!state->stream) {
      throw Error(Errc::io_error, fmt::format("cannot open '{}' for streaming", options.stream_to->string()));
    }
    state->stream << kTraceCsvHeader << '\n' << std::flush;
  }
  auto* raw = state.get();
  state->thread = std::jthread([raw](std::stop_token stop) { raw->run(stop); });
  return SamplerHandle(std::move(state));
}

Trace stop_sampler(SamplerHandle& handle) { return handle.stop(); }

// ---------------------------------------------------------------------------
// CSV

std::string format_trace_row(const TelemetrySample& s) {
  return fmt::format("{:.2f},{},{},{:.2f},{}\n", s.elapsed_s, s.timestamp_utc, s.memory_mib, s.power_w,
                     s.gpu_util_pct);
}

std::string trace_to_csv(const Trace& trace) {
  std::string out = kTraceCsvHeader;
  out += '\n';
  for (const auto& s : trace.samples) out += format_trace_row(s);
  return out;
}

void write_csv(const Trace& trace, const std::filesystem::path& path) {
  trace.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, fmt::format("cannot write '{}'", path.string()));
  out << trace_to_csv(trace);
  if (!out) throw Error(Errc::io_error, fmt::format("failed writing '{}'", path.string()));
}

Trace parse_trace_csv(std::string_view text, double interval_s) {
  Trace trace;
  trace.interval_s = interval_s;
  std::size_t line_no = 0;
  bool header_seen = false;
  for (std::string_view rest = text; !rest.empty();) {
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kTraceCsvHeader) {
        throw Error(Errc::schema_mismatch, fmt::format("unexpected trace header '{}'", line));
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) {
      throw Error(Errc::schema_mismatch, fmt::format("trace line {}: expected 5 fields, got {}", line_no, f.size()));
    }
    const auto elapsed = parse_number<double>(f[0]);
    const auto memory = parse_number<long>(f[2]);
    const auto power = parse_number<double>(f[3]);
    const auto util = parse_number<int>(f[4]);
    if (!elapsed || !memory || !power || !util || f[1].empty()) {
      throw Error(Errc::schema_mismatch, fmt::format("trace line {}: malformed row '{}'", line_no, line));
    }
    trace.samples.push_back({*elapsed, std::string(f[1]), *memory, *power, *util});
  }
  if (!header_seen) throw Error(Errc::schema_mismatch, "trace file is empty");
  for (std::size_t i = 1; i < trace.samples.size(); ++i) {
    const double prev = trace.samples[i - 1].elapsed_s;
    const auto n = std::llround((trace.samples[i].elapsed_s - prev) / interval_s);
    for (long long j = 1; j < n; ++j) trace.gaps.push_back(prev + static_cast<double>(j) * interval_s);
  }
  try {
    trace.validate();
  } catch (const Error& e) {
    throw Error(Errc::schema_mismatch, e.what());
  }
  return trace;
}

Trace read_csv(const std::filesystem::path& path, double interval_s) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open trace '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  Trace trace = parse_trace_csv(buf.str(), interval_s);
  trace.label = path.stem().string();
  return trace;
}

}  // namespace leafbench
