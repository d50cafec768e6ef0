#pragma once

#include <cstdint>

namespace cbbreg {

/// ln Γ(x) for x > 0 (Lanczos approximation, g = 607/128).
/// Throws std::domain_error for non-positive or non-finite x.
double log_gamma(double x);

/// ln Γ(a + k) − ln Γ(a) for a > 0 and real k ≥ 0.
///
/// Avoids the cancellation of two large log-gamma values: small integer
/// shifts are summed directly, large arguments use the difference of two
/// Stirling series. This is the primitive behind every beta-binomial
/// log-PMF in the library, where a = π/σ can be as large as 1e12.
double log_gamma_ratio(double a, double k);

/// ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a + b).
double log_beta(double a, double b);

/// ln C(m, y) for 0 ≤ y ≤ m.
double log_choose(std::int64_t m, std::int64_t y);

/// ψ(x), the logarithmic derivative of Γ, for x > 0.
double digamma(double x);

/// ψ(a + k) − ψ(a) for a > 0 and integer k ≥ 0.
double digamma_ratio(double a, std::int64_t k);

/// Regularized upper incomplete gamma Q(s, x) = Γ(s, x) / Γ(s).
double regularized_gamma_q(double s, double x);

/// P(X > x) for X ~ χ²(df).
double chi_square_survival(double x, std::int64_t df);

}  // namespace cbbreg
