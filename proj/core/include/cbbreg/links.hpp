#pragma once

#include <string_view>

namespace cbbreg {

/// logit: (0,1) ↔ ℝ (π and δ); log: (0,∞) ↔ ℝ (σ); shifted_log: (1,∞) ↔ ℝ via ln(x − 1) (η).
enum class LinkKind { logit, log, shifted_log };

std::string_view to_string(LinkKind kind);

/// Maps a linear predictor to the parameter scale, clamped to the admissible box.
double apply_inverse_link(LinkKind kind, double linear_predictor);

/// Maps a parameter value to the linear-predictor scale.
/// Throws std::domain_error outside the link's domain.
double apply_link(LinkKind kind, double parameter_value);

/// d(parameter)/d(linear predictor); zero where the inverse link is clamped.
double inverse_link_derivative(LinkKind kind, double linear_predictor);

}  // namespace cbbreg
