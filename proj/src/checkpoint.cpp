// SPDX-License-Identifier: Apache-2.0
#include "leafbench/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

namespace {

constexpr const char* kMagic = "leafbench-checkpoint";

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw Error(Errc::parse_error, fmt::format("bad real '{}'", s));
  return v;
}

long long parse_int(const std::string& s) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw Error(Errc::parse_error, fmt::format("bad integer '{}'", s));
  return v;
}

std::string optional_real(const std::optional<double>& v) { return v ? hex(*v) : "none"; }

std::optional<double> parse_optional_real(const std::string& s) {
  if (s == "none") return std::nullopt;
  return parse_real(s);
}

void write_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) out << hex(m.data()[i]) << '\n';
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) throw Error(Errc::schema_mismatch, "checkpoint truncated");
    ++line_no_;
    return line;
  }

  // "key value" line with the expected key.
  std::string field(std::string_view key) {
    const std::string line = next();
    const auto space = line.find(' ');
    if (space == std::string::npos || std::string_view(line).substr(0, space) != key) {
      throw Error(Errc::schema_mismatch, fmt::format("line {}: expected '{}', got '{}'", line_no_, key, line));
    }
    return line.substr(space + 1);
  }

  void expect(std::string_view text) {
    const std::string line = next();
    if (line != text) {
      throw Error(Errc::schema_mismatch, fmt::format("line {}: expected '{}', got '{}'", line_no_, text, line));
    }
  }

  void read_values(double* dst, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = parse_real(next());
  }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& s = ckpt.model.shape();
  const auto& c = ckpt.config;
  out << kMagic << ' ' << kCheckpointVersion << '\n';
  out << "[shape]\n";
  out << "channels " << s.channels << "\nheight " << s.height << "\nwidth " << s.width << "\nhidden " << s.hidden
      << "\ncond_dim " << s.cond_dim << "\ntime_dim " << s.time_dim << '\n';
  out << "[schedule]\n";
  out << "num_steps " << ckpt.schedule.num_steps() << "\nbeta_start " << hex(ckpt.schedule.beta_start())
      << "\nbeta_end " << hex(ckpt.schedule.beta_end()) << '\n';
  out << "[train_config]\n";
  out << "learning_rate " << hex(c.learning_rate) << '\n'
      << "gradient_accumulation_steps " << c.gradient_accumulation_steps << '\n'
      << "training_steps " << c.training_steps << '\n'
      << "lr_warmup_steps " << c.lr_warmup_steps << '\n'
      << "lr_schedule " << c.lr_schedule << '\n'
      << "snr_gamma " << optional_real(c.snr_gamma) << '\n'
      << "text_encoder_lr " << optional_real(c.text_encoder_lr) << '\n'
      << "batch_size " << c.batch_size << '\n'
      << "rng_seed " << c.rng_seed << '\n'
      << "mode " << (c.mode == FineTuneMode::lora ? "lora" : "full") << '\n'
      << "lora_rank " << c.lora_rank << '\n'
      << "lora_scale " << hex(c.lora_scale) << '\n'
      << "uncond_probability " << hex(c.uncond_probability) << '\n'
      << "resolution " << c.resolution << '\n'
      << "max_sequence_length " << c.max_sequence_length << '\n'
      << "mixed_precision " << c.mixed_precision << '\n'
      << "optimizer " << c.optimizer << '\n'
      << "gradient_checkpointing " << (c.gradient_checkpointing ? 1 : 0) << '\n';
  out << "[manifest] " << ckpt.model.manifest().size() << '\n';
  for (const auto& b : ckpt.model.manifest()) {
    out << b.name;
    for (int d : b.shape) out << ' ' << d;
    out << '\n';
  }
  out << "[parameters] " << ckpt.model.parameter_count() << '\n';
  for (double v : ckpt.model.parameters()) out << hex(v) << '\n';
  for (Projection p : {Projection::query, Projection::key, Projection::value}) {
    const auto& a = ckpt.model.adapter(p);
    if (!a) continue;
    out << "[adapter " << projection_name(p) << "] " << a->d_in() << ' ' << a->rank() << ' ' << a->d_out() << ' '
        << hex(a->scale) << '\n';
    write_matrix(out, a->a);
    write_matrix(out, a->b);
  }
  out << "[end]\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  LineReader r(in);
  {
    const std::string header = r.next();
    if (header != fmt::format("{} {}", kMagic, kCheckpointVersion)) {
      throw Error(Errc::schema_mismatch, fmt::format("unsupported checkpoint header '{}'", header));
    }
  }
  r.expect("[shape]");
  DenoiserShape shape;
  shape.channels = static_cast<int>(parse_int(r.field("channels")));
  shape.height = static_cast<int>(parse_int(r.field("height")));
  shape.width = static_cast<int>(parse_int(r.field("width")));
  shape.hidden = static_cast<int>(parse_int(r.field("hidden")));
  shape.cond_dim = static_cast<int>(parse_int(r.field("cond_dim")));
  shape.time_dim = static_cast<int>(parse_int(r.field("time_dim")));

  r.expect("[schedule]");
  const int num_steps = static_cast<int>(parse_int(r.field("num_steps")));
  const double beta_start = parse_real(r.field("beta_start"));
  const double beta_end = parse_real(r.field("beta_end"));

  r.expect("[train_config]");
  TrainConfig c;
  c.learning_rate = parse_real(r.field("learning_rate"));
  c.gradient_accumulation_steps = static_cast<int>(parse_int(r.field("gradient_accumulation_steps")));
  c.training_steps = static_cast<int>(parse_int(r.field("training_steps")));
  c.lr_warmup_steps = static_cast<int>(parse_int(r.field("lr_warmup_steps")));
  c.lr_schedule = r.field("lr_schedule");
  c.snr_gamma = parse_optional_real(r.field("snr_gamma"));
  c.text_encoder_lr = parse_optional_real(r.field("text_encoder_lr"));
  c.batch_size = static_cast<int>(parse_int(r.field("batch_size")));
  c.rng_seed = std::stoull(r.field("rng_seed"));
  const std::string mode = r.field("mode");
  if (mode != "full" && mode != "lora") throw Error(Errc::schema_mismatch, fmt::format("unknown mode '{}'", mode));
  c.mode = mode == "lora" ? FineTuneMode::lora : FineTuneMode::full;
  c.lora_rank = static_cast<int>(parse_int(r.field("lora_rank")));
  c.lora_scale = parse_real(r.field("lora_scale"));
  c.uncond_probability = parse_real(r.field("uncond_probability"));
  c.resolution = static_cast<int>(parse_int(r.field("resolution")));
  c.max_sequence_length = static_cast<int>(parse_int(r.field("max_sequence_length")));
  c.mixed_precision = r.field("mixed_precision");
  c.optimizer = r.field("optimizer");
  c.gradient_checkpointing = parse_int(r.field("gradient_checkpointing")) != 0;

  // The manifest is regenerated from the shape and must match what was stored.
  const Denoiser layout(shape, 0);
  const auto blocks = static_cast<std::size_t>(parse_int(r.field("[manifest]")));
  if (blocks != layout.manifest().size()) throw Error(Errc::schema_mismatch, "manifest block count differs");
  for (const auto& b : layout.manifest()) {
    std::string expected = b.name;
    for (int d : b.shape) expected += ' ' + std::to_string(d);
    r.expect(expected);
  }
  const auto count = static_cast<std::size_t>(parse_int(r.field("[parameters]")));
  if (count != layout.parameter_count()) throw Error(Errc::schema_mismatch, "parameter count differs from manifest");
  std::vector<double> params(count);
  r.read_values(params.data(), count);
  Denoiser model = Denoiser::from_parameters(shape, std::move(params));

  for (;;) {
    const std::string line = r.next();
    if (line == "[end]") break;
    std::istringstream head(line);
    std::string tag, name;
    head >> tag >> name;
    if (tag != "[adapter" || name.size() < 2 || name.back() != ']') {
      throw Error(Errc::schema_mismatch, fmt::format("unexpected section '{}'", line));
    }
    const auto target = parse_projection(name.substr(0, name.size() - 1));
    if (!target) throw Error(Errc::schema_mismatch, fmt::format("unknown adapter target in '{}'", line));
    int d_in = 0, rank = 0, d_out = 0;
    std::string scale;
    head >> d_in >> rank >> d_out >> scale;
    if (!head || d_in < 1 || rank < 1 || d_out < 1) {
      throw Error(Errc::schema_mismatch, fmt::format("bad adapter header '{}'", line));
    }
    LoraAdapter a;
    a.target = *target;
    a.scale = parse_real(scale);
    a.a.resize(d_in, rank);
    a.b.resize(rank, d_out);
    r.read_values(a.a.data(), static_cast<std::size_t>(a.a.size()));
    r.read_values(a.b.data(), static_cast<std::size_t>(a.b.size()));
    model.set_adapter(std::move(a));
  }
  return Checkpoint{std::move(model), make_schedule(num_steps, beta_start, beta_end), std::move(c)};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, fmt::format("cannot open '{}' for writing", path.string()));
  write_checkpoint(out, ckpt);
  if (!out) throw Error(Errc::io_error, fmt::format("failed writing '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open '{}'", path.string()));
  return read_checkpoint(in);
}

}  // namespace leafbench
