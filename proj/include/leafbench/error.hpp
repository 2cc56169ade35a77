// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace leafbench {

enum class Errc {
  invalid_range,
  shape_mismatch,
  step_out_of_range,
  dimension_mismatch,
  empty_dataset,
  non_finite,
  invalid_step_count,
  rank_too_large,
  malformed_weight,
  unbalanced_parentheses,
  empty_prompt,
  empty_source,
  decode_failure,
  backend_unavailable,
  precondition,
  double_stop,
  parse_error,
  io_error,
  schema_mismatch,
  too_few_samples,
  baseline_missing,
  size_mismatch,
  empty_manifest,
  config_error,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind rather than the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace leafbench
