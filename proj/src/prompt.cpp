// SPDX-License-Identifier: Apache-2.0
#include "leafbench/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::optional<double> numeric_literal(std::string_view text) {
  static const std::regex pattern(R"(^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$)");
  const std::string s(trim(text));
  if (!std::regex_match(s, pattern)) return std::nullopt;
  return std::strtod(s.c_str(), nullptr);
}

class PromptParser {
 public:
  explicit PromptParser(std::string_view raw) : raw_(raw) {}

  std::vector<PromptToken> parse() {
    parse_sequence(0);
    return std::move(tokens_);
  }

 private:
  // Token range [first, last) of the item a weight modifier would apply to.
  struct Target {
    std::size_t first;
    std::size_t last;
  };

  void parse_sequence(int depth) {
    std::optional<Target> previous;
    for (;;) {
      while (pos_ < raw_.size() && is_space(raw_[pos_])) ++pos_;
      if (pos_ == raw_.size()) {
        if (depth > 0) throw Error(Errc::unbalanced_parentheses, fmt::format("missing ')' in '{}'", raw_));
        return;
      }
      const char c = raw_[pos_];
      if (c == ')') {
        if (depth == 0) {
          throw Error(Errc::unbalanced_parentheses, fmt::format("unexpected ')' at offset {} in '{}'", pos_, raw_));
        }
        ++pos_;
        return;
      }
      if (c == '(') {
        const std::size_t open = pos_;
        const std::size_t close = matching_close(open);
        const auto weight = numeric_literal(raw_.substr(open + 1, close - open - 1));
        if (weight) {
          pos_ = close + 1;
          apply_weight(previous, *weight, open);
          previous.reset();
          continue;
        }
        ++pos_;
        const std::size_t first = tokens_.size();
        parse_sequence(depth + 1);
        previous = Target{first, tokens_.size()};
        continue;
      }
      const std::size_t start = pos_;
      while (pos_ < raw_.size() && !is_space(raw_[pos_]) && raw_[pos_] != '(' && raw_[pos_] != ')') ++pos_;
      std::string word(raw_.substr(start, pos_ - start));
      for (auto at = word.find("**"); at != std::string::npos; at = word.find("**")) word.erase(at, 2);
      if (word.empty()) {
        previous.reset();
        continue;
      }
      tokens_.push_back(PromptToken{std::move(word), 1.0, false});
      previous = Target{tokens_.size() - 1, tokens_.size()};
    }
  }

  // Offset of the ')' closing the '(' at open; nesting-aware.
  std::size_t matching_close(std::size_t open) const {
    int depth = 0;
    for (std::size_t i = open; i < raw_.size(); ++i) {
      if (raw_[i] == '(') ++depth;
      if (raw_[i] == ')' && --depth == 0) return i;
    }
    throw Error(Errc::unbalanced_parentheses, fmt::format("'(' at offset {} is never closed in '{}'", open, raw_));
  }

  void apply_weight(const std::optional<Target>& target, double weight, std::size_t offset) {
    if (!target || target->first == target->last) {
      throw Error(Errc::malformed_weight,
                  fmt::format("weight ({}) at offset {} has no preceding word or phrase", weight, offset));
    }
    if (!(weight > 0.0) || weight > kMaxTokenWeight) {
      throw Error(Errc::malformed_weight,
                  fmt::format("weight {} at offset {} outside (0, {}]", weight, offset, kMaxTokenWeight));
    }
    for (std::size_t i = target->first; i < target->last; ++i) {
      const double combined = tokens_[i].weight * weight;
      if (combined > kMaxTokenWeight) {
        throw Error(Errc::malformed_weight, fmt::format("combined weight {} on '{}' exceeds {}", combined,
                                                        tokens_[i].text, kMaxTokenWeight));
      }
      tokens_[i].weight = combined;
    }
  }

  std::string_view raw_;
  std::size_t pos_ = 0;
  std::vector<PromptToken> tokens_;
};

bool valid_identifier(std::string_view id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
  });
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string format_weight(double w) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, w);
  return std::string(buf, end);
}

}  // namespace

void IdentifierRegistry::add(std::string identifier, std::string label) {
  if (!valid_identifier(identifier)) {
    throw Error(Errc::parse_error, fmt::format("identifier '{}' must be lowercase alphanumeric", identifier));
  }
  if (entries_.contains(identifier)) {
    throw Error(Errc::parse_error, fmt::format("identifier '{}' registered twice", identifier));
  }
  entries_.emplace(std::move(identifier), std::move(label));
}

std::optional<std::string> IdentifierRegistry::label_of(std::string_view token) const {
  const auto it = entries_.find(lowercase(token));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

IdentifierRegistry IdentifierRegistry::parse(std::string_view text) {
  IdentifierRegistry registry;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::parse_error, fmt::format("registry line {}: expected key=value, got '{}'", line_no, line));
    }
    registry.add(std::string(trim(body.substr(0, eq))), std::string(trim(body.substr(eq + 1))));
  }
  return registry;
}

IdentifierRegistry IdentifierRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open registry '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string IdentifierRegistry::to_text() const {
  std::string out;
  for (const auto& [id, label] : entries_) out += id + "=" + label + "\n";
  return out;
}

PromptAst parse_prompt(std::string_view raw, const IdentifierRegistry& registry) {
  if (trim(raw).empty()) throw Error(Errc::empty_prompt, "prompt is empty");
  PromptAst ast;
  ast.raw = std::string(raw);
  ast.tokens = PromptParser(raw).parse();
  for (auto& token : ast.tokens) token.is_identifier = registry.contains(token.text);
  return ast;
}

std::string canonical_text(const PromptAst& ast) {
  std::string out;
  for (const auto& token : ast.tokens) {
    if (!out.empty()) out += ' ';
    out += token.text;
    if (token.weight != 1.0) out += " (" + format_weight(token.weight) + ")";
  }
  return out;
}

std::vector<double> token_embedding(std::string_view text, std::uint64_t vocab_seed, int dim) {
  if (dim < 1) throw Error(Errc::dimension_mismatch, "embedding dim must be positive");
  std::mt19937_64 rng(splitmix64(fnv1a(text) ^ splitmix64(vocab_seed)));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> embed_prompt(const PromptAst& ast, std::uint64_t vocab_seed, int dim, int max_tokens) {
  std::vector<double> cond(static_cast<std::size_t>(dim), 0.0);
  const auto n = std::min(ast.tokens.size(), static_cast<std::size_t>(std::max(max_tokens, 0)));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& token = ast.tokens[i];
    const auto e = token_embedding(token.text, vocab_seed, dim);
    for (std::size_t j = 0; j < cond.size(); ++j) cond[j] += token.weight * e[j];
  }
  return cond;
}

std::vector<std::string> load_prompt_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open prompt file '{}'", path.string()));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    lines.emplace_back(body);
  }
  return lines;
}

}  // namespace leafbench
