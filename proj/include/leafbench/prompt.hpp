// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace leafbench {

inline constexpr double kMaxTokenWeight = 10.0;
inline constexpr int kMaxSequenceLength = 100;
inline constexpr int kDefaultConditioningDim = 64;

struct PromptToken {
  std::string text;
  double weight = 1.0;
  bool is_identifier = false;

  friend bool operator==(const PromptToken&, const PromptToken&) = default;
};

struct PromptAst {
  std::vector<PromptToken> tokens;
  std::string raw;
};

/// Rare key tokens bound to a class label, e.g. "nbd" -> "anthracnose".
class IdentifierRegistry {
 public:
  /// Identifiers must be nonempty lowercase ASCII alphanumerics and unique.
  void add(std::string identifier, std::string label);
  std::optional<std::string> label_of(std::string_view token) const;
  bool contains(std::string_view token) const { return label_of(token).has_value(); }
  const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return entries_; }

  /// Plain-text key=value lines; '#' starts a comment line.
  static IdentifierRegistry load(const std::filesystem::path& path);
  static IdentifierRegistry parse(std::string_view text);
  std::string to_text() const;

 private:
  std::map<std::string, std::string, std::less<>> entries_;
};

/// Whitespace-separated words. "(w)" with a numeric w multiplies the weight
/// of the word or parenthesized phrase right before it and emits nothing;
/// any other parenthesized text is a phrase of ordinary tokens. Literal "**"
/// markers are stripped from words.
PromptAst parse_prompt(std::string_view raw, const IdentifierRegistry& registry = {});

/// Tokens separated by single spaces, with " (w)" after any token whose
/// weight is not 1. Parsing the result yields the same token list.
std::string canonical_text(const PromptAst& ast);

/// Deterministic unit vector for one token under a vocabulary seed.
std::vector<double> token_embedding(std::string_view text, std::uint64_t vocab_seed,
                                    int dim = kDefaultConditioningDim);

/// Weighted sum of token embeddings over the first max_tokens tokens.
std::vector<double> embed_prompt(const PromptAst& ast, std::uint64_t vocab_seed, int dim = kDefaultConditioningDim,
                                 int max_tokens = kMaxSequenceLength);

/// Newline-delimited prompt file; blank lines and '#' lines are skipped.
std::vector<std::string> load_prompt_lines(const std::filesystem::path& path);

}  // namespace leafbench
