// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "leafbench/bench.hpp"
#include "leafbench/error.hpp"

namespace leafbench {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>, std::less<>>& known_keys() {
  static const std::map<std::string, std::set<std::string>, std::less<>> keys = {
      {"bench", {"label", "phases", "images", "out", "seed", "workload", "command", "external_images"}},
      {"data",
       {"train_manifest", "synthetic_images", "real_manifest", "prompt", "prompt_file", "identifiers", "vocab_seed"}},
      {"model", {"height", "width", "channels", "hidden", "cond_dim", "time_dim", "checkpoint"}},
      {"train",
       {"learning_rate", "gradient_accumulation_steps", "training_steps", "lr_warmup_steps", "lr_schedule",
        "snr_gamma", "text_encoder_lr", "batch_size", "mode", "lora_rank", "lora_scale", "uncond_probability",
        "resolution", "max_sequence_length", "mixed_precision", "optimizer", "gradient_checkpointing"}},
      {"sample", {"inference_steps", "guidance_scale"}},
      {"telemetry",
       {"backend", "gpu_index", "clock", "interval", "memory_mib", "power_w", "gpu_util", "seconds_per_update",
        "seconds_per_image"}},
      {"eval", {"extractor_seed"}},
  };
  return keys;
}

[[noreturn]] void bad(const std::string& key, std::string_view value, std::string_view why) {
  throw Error(Errc::config_error, fmt::format("{} = '{}': {}", key, value, why));
}

template <typename T>
T number(const std::string& key, const std::string& raw) {
  T value{};
  const char* end = raw.data() + raw.size();
  auto [ptr, ec] = std::from_chars(raw.data(), end, value);
  if (ec != std::errc() || ptr != end) bad(key, raw, "not a number");
  return value;
}

bool boolean(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1" || raw == "yes") return true;
  if (raw == "false" || raw == "0" || raw == "no") return false;
  bad(key, raw, "expected true or false");
}

std::optional<double> optional_number(const std::string& key, const std::string& raw) {
  if (raw == "none") return std::nullopt;
  return number<double>(key, raw);
}

fs::path resolve(const fs::path& base, const std::string& raw) {
  if (raw.empty()) return {};
  fs::path p(raw);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::vector<WorkloadPhase> parse_phases(const std::string& key, const std::string& raw) {
  std::vector<WorkloadPhase> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    const auto p = parse_phase(item);
    if (!p) bad(key, raw, "phases are training and/or inference");
    if (std::find(out.begin(), out.end(), *p) != out.end()) bad(key, raw, "phase listed twice");
    out.push_back(*p);
  }
  return out;
}

std::string phases_text(const std::vector<WorkloadPhase>& phases) {
  std::string out;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    if (i) out += ',';
    out += to_string(phases[i]);
  }
  return out;
}

std::string optional_text(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : "none"; }

void apply(BenchConfig& c, const std::string& section, const std::string& name, const std::string& v,
           const fs::path& base) {
  const std::string key = section + "." + name;
  auto& t = c.train;
  if (section == "bench") {
    if (name == "label") c.label = v;
    else if (name == "phases") c.phases = parse_phases(key, v);
    else if (name == "images") c.images_to_generate = number<long>(key, v);
    else if (name == "out") c.out_dir = resolve(base, v);
    else if (name == "seed") c.seed = number<std::uint64_t>(key, v);
    else if (name == "workload") {
      if (v == "toy") c.workload = WorkloadKind::toy;
      else if (v == "external") c.workload = WorkloadKind::external;
      else bad(key, v, "expected toy or external");
    } else if (name == "command") c.command = v;
    else if (name == "external_images") c.external_images = resolve(base, v);
  } else if (section == "data") {
    if (name == "train_manifest") c.train_manifest = resolve(base, v);
    else if (name == "synthetic_images") c.synthetic_images = number<int>(key, v);
    else if (name == "real_manifest") c.real_manifest = resolve(base, v);
    else if (name == "prompt") c.prompt = v;
    else if (name == "prompt_file") c.prompt_file = resolve(base, v);
    else if (name == "identifiers") c.identifiers_file = resolve(base, v);
    else if (name == "vocab_seed") c.vocab_seed = number<std::uint64_t>(key, v);
  } else if (section == "model") {
    if (name == "height") c.shape.height = number<int>(key, v);
    else if (name == "width") c.shape.width = number<int>(key, v);
    else if (name == "channels") c.shape.channels = number<int>(key, v);
    else if (name == "hidden") c.shape.hidden = number<int>(key, v);
    else if (name == "cond_dim") c.shape.cond_dim = number<int>(key, v);
    else if (name == "time_dim") c.shape.time_dim = number<int>(key, v);
    else if (name == "checkpoint") c.checkpoint = resolve(base, v);
  } else if (section == "train") {
    if (name == "learning_rate") t.learning_rate = number<double>(key, v);
    else if (name == "gradient_accumulation_steps") t.gradient_accumulation_steps = number<int>(key, v);
    else if (name == "training_steps") t.training_steps = number<int>(key, v);
    else if (name == "lr_warmup_steps") t.lr_warmup_steps = number<int>(key, v);
    else if (name == "lr_schedule") t.lr_schedule = v;
    else if (name == "snr_gamma") t.snr_gamma = optional_number(key, v);
    else if (name == "text_encoder_lr") t.text_encoder_lr = optional_number(key, v);
    else if (name == "batch_size") t.batch_size = number<int>(key, v);
    else if (name == "mode") {
      if (v == "full") t.mode = FineTuneMode::full;
      else if (v == "lora") t.mode = FineTuneMode::lora;
      else bad(key, v, "expected full or lora");
    } else if (name == "lora_rank") t.lora_rank = number<int>(key, v);
    else if (name == "lora_scale") t.lora_scale = number<double>(key, v);
    else if (name == "uncond_probability") t.uncond_probability = number<double>(key, v);
    else if (name == "resolution") t.resolution = number<int>(key, v);
    else if (name == "max_sequence_length") t.max_sequence_length = number<int>(key, v);
    else if (name == "mixed_precision") t.mixed_precision = v;
    else if (name == "optimizer") t.optimizer = v;
    else if (name == "gradient_checkpointing") t.gradient_checkpointing = boolean(key, v);
  } else if (section == "sample") {
    if (name == "inference_steps") c.inference_steps = number<int>(key, v);
    else if (name == "guidance_scale") c.guidance_scale = number<double>(key, v);
  } else if (section == "telemetry") {
    if (name == "backend") {
      if (v == "real") c.backend = BackendKind::real;
      else if (v == "synthetic") c.backend = BackendKind::synthetic;
      else if (v.rfind("synthetic:", 0) == 0 && v.size() > 10) {
        c.backend = BackendKind::synthetic;
        c.backend_trace = resolve(base, v.substr(10));
      } else bad(key, v, "expected real, synthetic or synthetic:<trace.csv>");
    } else if (name == "gpu_index") c.gpu_index = number<int>(key, v);
    else if (name == "clock") {
      if (v == "virtual") c.clock = ClockKind::virtual_time;
      else if (v == "wall") c.clock = ClockKind::wall;
      else if (v == "auto") c.clock.reset();
      else bad(key, v, "expected virtual, wall or auto");
    } else if (name == "interval") c.interval_s = number<double>(key, v);
    else if (name == "memory_mib") c.synthetic_reading.memory_mib = number<long>(key, v);
    else if (name == "power_w") c.synthetic_reading.power_w = number<double>(key, v);
    else if (name == "gpu_util") c.synthetic_reading.gpu_util_pct = number<int>(key, v);
    else if (name == "seconds_per_update") c.seconds_per_update = number<double>(key, v);
    else if (name == "seconds_per_image") c.seconds_per_image = number<double>(key, v);
  } else if (section == "eval") {
    if (name == "extractor_seed") c.extractor_seed = number<std::uint64_t>(key, v);
  }
}

bool safe_label(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_' || ch == '-';
  });
}

}  // namespace

ClockKind BenchConfig::effective_clock() const {
  if (clock) return *clock;
  return backend == BackendKind::synthetic && workload == WorkloadKind::toy ? ClockKind::virtual_time
                                                                            : ClockKind::wall;
}

void BenchConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::config_error, what); };
  if (!safe_label(label)) fail(fmt::format("label '{}' must be letters, digits, '.', '_' or '-'", label));
  if (phases.empty()) fail("at least one phase is required");
  if (images_to_generate < 0) fail("images must be nonnegative");
  if (out_dir.empty()) fail("an output directory is required");
  if (workload == WorkloadKind::external) {
    if (command.empty()) fail("external workload needs a command");
    if (phases.size() != 1) fail("an external workload runs exactly one phase");
  }
  if (synthetic_images < 1) fail("synthetic_images must be positive");
  if (!train_manifest.empty() && !fs::exists(train_manifest)) {
    fail(fmt::format("train_manifest '{}' does not exist", train_manifest.string()));
  }
  if (!real_manifest.empty() && !fs::exists(real_manifest)) {
    fail(fmt::format("real_manifest '{}' does not exist", real_manifest.string()));
  }
  if (!prompt_file.empty() && !fs::exists(prompt_file)) {
    fail(fmt::format("prompt_file '{}' does not exist", prompt_file.string()));
  }
  if (!identifiers_file.empty() && !fs::exists(identifiers_file)) {
    fail(fmt::format("identifiers '{}' does not exist", identifiers_file.string()));
  }
  if (!checkpoint.empty() && !fs::exists(checkpoint)) {
    fail(fmt::format("checkpoint '{}' does not exist", checkpoint.string()));
  }
  if (!backend_trace.empty() && !fs::exists(backend_trace)) {
    fail(fmt::format("backend trace '{}' does not exist", backend_trace.string()));
  }
  if (shape.height < 2 || shape.width < 2 || shape.height % 2 || shape.width % 2) {
    fail("model height and width must be even and at least 2");
  }
  if (shape.channels != 3) fail("the toy model works on RGB images (channels = 3)");
  if (shape.hidden < 1 || shape.cond_dim < 1 || shape.time_dim < 2 || shape.time_dim % 2) {
    fail("model hidden, cond_dim and an even time_dim are required");
  }
  if (inference_steps < 1) fail("inference_steps must be positive");
  if (!(guidance_scale >= 0.0)) fail("guidance_scale must be nonnegative");
  if (!(interval_s >= kMinSampleInterval)) fail(fmt::format("interval must be at least {} s", kMinSampleInterval));
  if (!(seconds_per_update >= 0.0) || !(seconds_per_image >= 0.0)) fail("virtual seconds must be nonnegative");
  if (workload == WorkloadKind::external && clock == ClockKind::virtual_time) {
    fail("an external command can only be timed on the wall clock");
  }
  if (backend == BackendKind::real && clock == ClockKind::virtual_time) {
    fail("the real backend can only be sampled on the wall clock");
  }
  try {
    train.validate();
  } catch (const Error& e) {
    throw Error(Errc::config_error, e.what());
  }
}

BenchConfig parse_bench_config(std::string_view text, const fs::path& base_dir) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(Errc::config_error, fmt::format("line {}: {}", e.line(), e.message()));
  }
  BenchConfig config;
  for (const auto& [section, body] : tree) {
    const auto known = known_keys().find(section);
    if (known == known_keys().end()) {
      if (!body.data().empty()) {
        throw Error(Errc::config_error, fmt::format("key '{}' is outside any section", section));
      }
      throw Error(Errc::config_error, fmt::format("unknown section [{}]", section));
    }
    for (const auto& [name, node] : body) {
      if (!known->second.contains(name)) {
        throw Error(Errc::config_error, fmt::format("unknown key '{}' in [{}]", name, section));
      }
      apply(config, section, name, node.get_value<std::string>(), base_dir);
    }
  }
  return config;
}

BenchConfig load_bench_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::config_error, fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_bench_config(ss.str(), path.parent_path());
}

std::string bench_config_to_ini(const BenchConfig& c) {
  const auto& t = c.train;
  std::string out;
  auto line = [&out](std::string_view key, const auto& value) { out += fmt::format("{} = {}\n", key, value); };
  out += "[bench]\n";
  line("label", c.label);
  line("phases", phases_text(c.phases));
  line("images", c.images_to_generate);
  line("out", c.out_dir.string());
  line("seed", c.seed);
  line("workload", c.workload == WorkloadKind::toy ? "toy" : "external");
  line("command", c.command);
  line("external_images", c.external_images.string());
  out += "\n[data]\n";
  line("train_manifest", c.train_manifest.string());
  line("synthetic_images", c.synthetic_images);
  line("real_manifest", c.real_manifest.string());
  line("prompt", c.prompt);
  line("prompt_file", c.prompt_file.string());
  line("identifiers", c.identifiers_file.string());
  line("vocab_seed", c.vocab_seed);
  out += "\n[model]\n";
  line("height", c.shape.height);
  line("width", c.shape.width);
  line("channels", c.shape.channels);
  line("hidden", c.shape.hidden);
  line("cond_dim", c.shape.cond_dim);
  line("time_dim", c.shape.time_dim);
  line("checkpoint", c.checkpoint.string());
  out += "\n[train]\n";
  line("learning_rate", t.learning_rate);
  line("gradient_accumulation_steps", t.gradient_accumulation_steps);
  line("training_steps", t.training_steps);
  line("lr_warmup_steps", t.lr_warmup_steps);
  line("lr_schedule", t.lr_schedule);
  line("snr_gamma", optional_text(t.snr_gamma));
  line("text_encoder_lr", optional_text(t.text_encoder_lr));
  line("batch_size", t.batch_size);
  line("mode", t.mode == FineTuneMode::full ? "full" : "lora");
  line("lora_rank", t.lora_rank);
  line("lora_scale", t.lora_scale);
  line("uncond_probability", t.uncond_probability);
  line("resolution", t.resolution);
  line("max_sequence_length", t.max_sequence_length);
  line("mixed_precision", t.mixed_precision);
  line("optimizer", t.optimizer);
  line("gradient_checkpointing", t.gradient_checkpointing ? "true" : "false");
  out += "\n[sample]\n";
  line("inference_steps", c.inference_steps);
  line("guidance_scale", c.guidance_scale);
  out += "\n[telemetry]\n";
  line("backend", c.backend == BackendKind::real ? std::string("real")
                  : c.backend_trace.empty()      ? std::string("synthetic")
                                                 : "synthetic:" + c.backend_trace.string());
  line("gpu_index", c.gpu_index);
  line("clock", !c.clock ? "auto" : *c.clock == ClockKind::wall ? "wall" : "virtual");
  line("interval", c.interval_s);
  line("memory_mib", c.synthetic_reading.memory_mib);
  line("power_w", c.synthetic_reading.power_w);
  line("gpu_util", c.synthetic_reading.gpu_util_pct);
  line("seconds_per_update", c.seconds_per_update);
  line("seconds_per_image", c.seconds_per_image);
  out += "\n[eval]\n";
  line("extractor_seed", c.extractor_seed);
  return out;
}

std::string config_hash(const BenchConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bench_config_to_ini(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace leafbench
