#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbbreg/regression.hpp"

namespace cbbreg {

/// Independent 64-bit seed for stream `index` of a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// n rows with covariates ~ U(0,1) and y ~ Binomial(m, logistic(β₀ + Σ βⱼ xⱼ)).
/// One covariate is named "x"; several are named "x1", "x2", ….
Dataset generate_binomial_data(std::size_t n, std::int64_t m, const std::vector<double>& beta,
                               std::uint64_t seed);

/// Replaces ⌈fraction·n⌉ responses, chosen without replacement, by draws from
/// the discrete uniform on {0, …, mᵢ}. Replaced indices are recorded in
/// `replaced_rows`.
Dataset contaminate(const Dataset& data, double fraction, std::uint64_t seed);

/// Redraws every response from the model family at the given coefficients,
/// keeping trials and covariates.
Dataset simulate_response(const Dataset& data, const ModelSpec& spec, const Coefficients& coeffs,
                          std::uint64_t seed);

struct StudyConfig {
  std::size_t n = 500;
  std::int64_t m = 10;
  std::vector<double> true_beta = {2.0, 1.0};
  std::vector<double> fractions = {0.01, 0.05};
  std::size_t replications = 1000;
  std::uint64_t seed = 0;
  /// Worker threads; 0 means one per hardware thread.
  unsigned threads = 0;

  void validate() const;
};

struct StudyCell {
  Family family = Family::binomial;
  double fraction = 0.0;
  std::size_t coefficient = 0;
  double bias = 0.0;
  double mse = 0.0;
  std::size_t fits = 0;  // successful fits aggregated into this cell
};

struct StudyReport {
  StudyConfig config;
  std::vector<StudyCell> cells;  // ordered by fraction, family, coefficient
  std::size_t failures = 0;
  std::size_t non_converged = 0;
  std::vector<std::string> failure_messages;

  const StudyCell& cell(Family family, double fraction, std::size_t coefficient) const;
};

/// Generates, contaminates and fits B/BB/cBB (π ~ x, the rest intercept-only)
/// for each replication and contamination fraction. Replication r draws from
/// derive_seed(seed + r, ·), so results do not depend on the thread count.
/// Throws std::runtime_error if more than 10% of the fits fail.
StudyReport run_sensitivity_study(const StudyConfig& config, const FitControl& control);

}  // namespace cbbreg
