#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace cbbreg {

/// Numerically admissible parameter box. The open intervals of the model
/// (π, δ ∈ (0,1), σ > 0, η > 1) are enforced as these closed ranges.
namespace admissible {
inline constexpr double kProbabilityMin = 1e-12;
inline constexpr double kProbabilityMax = 1.0 - 1e-12;
inline constexpr double kDispersionMin = 1e-12;
inline constexpr double kDispersionMax = 1e12;
inline constexpr double kInflationMin = 1.0 + 1e-12;
inline constexpr double kInflationMax = 1e12;
}  // namespace admissible

/// An observed count y out of m trials, 0 ≤ y ≤ m, m ≥ 1.
struct BoundedCount {
  std::int64_t y = 0;
  std::int64_t m = 1;

  void validate() const;
  friend bool operator==(const BoundedCount&, const BoundedCount&) = default;
};

struct BBParams {
  double pi = 0.5;
  double sigma = 1.0;

  void validate() const;
};

struct CBBParams {
  double pi = 0.5;
  double sigma = 1.0;
  double delta = 0.05;
  double eta = 1.5;

  void validate() const;
  BBParams reference() const { return {pi, sigma}; }
  BBParams contaminant() const { return {pi, eta * sigma}; }
};

struct MomentSet {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

double binom_log_pmf(BoundedCount obs, double pi);
double bb_log_pmf(BoundedCount obs, BBParams p);
double cbb_log_pmf(BoundedCount obs, CBBParams p);

MomentSet binom_moments(std::int64_t m, double pi);
MomentSet bb_moments(std::int64_t m, BBParams p);
MomentSet cbb_moments(std::int64_t m, CBBParams p);

/// Moments by direct summation over {0, …, m}. Throws std::domain_error if the
/// exponentiated PMF does not sum to one within 1e-9.
MomentSet brute_force_moments(std::int64_t m, const std::function<double(std::int64_t)>& log_pmf);

/// Draws from the hierarchical form of the contaminated beta-binomial:
/// W ∈ {1, η} with P(W = η) = δ, p ~ Beta(π/(Wσ), (1−π)/(Wσ)), y ~ Bin(m, p).
std::vector<BoundedCount> cbb_sample(std::size_t count, std::int64_t m, CBBParams p,
                                     std::uint64_t seed);

namespace detail {

/// Beta-binomial log-PMF without the binomial coefficient, together with its
/// partial derivatives in π and ln σ. No validation; for hot loops.
struct BBKernel {
  double value;
  double d_pi;
  double d_log_sigma;
};
BBKernel bb_log_kernel(std::int64_t y, std::int64_t m, double pi, double sigma);
double bb_log_kernel_value(std::int64_t y, std::int64_t m, double pi, double sigma);

}  // namespace detail

}  // namespace cbbreg
