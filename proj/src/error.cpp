// SPDX-License-Identifier: Apache-2.0
#include "leafbench/error.hpp"

namespace leafbench {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_range: return "invalid-range";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::step_out_of_range: return "step-out-of-range";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::empty_dataset: return "empty-dataset";
    case Errc::non_finite: return "non-finite";
    case Errc::invalid_step_count: return "invalid-step-count";
    case Errc::rank_too_large: return "rank-too-large";
    case Errc::malformed_weight: return "malformed-weight";
    case Errc::unbalanced_parentheses: return "unbalanced-parentheses";
    case Errc::empty_prompt: return "empty-prompt";
    case Errc::empty_source: return "empty-source";
    case Errc::decode_failure: return "decode-failure";
    case Errc::backend_unavailable: return "backend-unavailable";
    case Errc::precondition: return "precondition";
    case Errc::double_stop: return "double-stop";
    case Errc::parse_error: return "parse-error";
    case Errc::io_error: return "io-error";
    case Errc::schema_mismatch: return "schema-mismatch";
    case Errc::too_few_samples: return "too-few-samples";
    case Errc::baseline_missing: return "baseline-missing";
    case Errc::size_mismatch: return "size-mismatch";
    case Errc::empty_manifest: return "empty-manifest";
    case Errc::config_error: return "config-error";
  }
  return "unknown";
}

}  // namespace leafbench
