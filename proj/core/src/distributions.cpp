#include "cbbreg/distributions.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <random>
#include <stdexcept>
#include <string>

#include "cbbreg/special_functions.hpp"

namespace cbbreg {
namespace {

void require_in(double value, double lo, double hi, const char* name) {
  if (!(value >= lo && value <= hi)) {
    std::ostringstream msg;
    msg << std::setprecision(15) << name << " = " << value << " outside admissible range [" << lo
        << ", " << hi << "]";
    throw std::domain_error(msg.str());
  }
}

void require_trials(std::int64_t m) {
  if (m < 1) throw std::domain_error("m must be >= 1, got " + std::to_string(m));
}

double log_sum_exp(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -INFINITY) return hi;
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// ln G for G ~ Gamma(shape, 1), stable for shapes far below 1.
double log_gamma_variate(std::mt19937_64& rng, double shape) {
  if (shape >= 1.0) {
    std::gamma_distribution<double> gamma(shape, 1.0);
    return std::log(gamma(rng));
  }
  std::gamma_distribution<double> gamma(shape + 1.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  while (u == 0.0) u = unif(rng);
  return std::log(gamma(rng)) + std::log(u) / shape;
}

constexpr std::int64_t kFusedLimit = 16;

}  // namespace

void BoundedCount::validate() const {
  require_trials(m);
  if (y < 0 || y > m) {
    throw std::domain_error("count y = " + std::to_string(y) + " outside [0, " +
                            std::to_string(m) + "]");
  }
}

void BBParams::validate() const {
  require_in(pi, admissible::kProbabilityMin, admissible::kProbabilityMax, "pi");
  require_in(sigma, admissible::kDispersionMin, admissible::kDispersionMax, "sigma");
}

void CBBParams::validate() const {
  require_in(pi, admissible::kProbabilityMin, admissible::kProbabilityMax, "pi");
  require_in(sigma, admissible::kDispersionMin, admissible::kDispersionMax, "sigma");
  require_in(delta, admissible::kProbabilityMin, admissible::kProbabilityMax, "delta");
  require_in(eta, admissible::kInflationMin, admissible::kInflationMax, "eta");
}

namespace detail {

// For m ≤ 16 every rising product stays below (1e12 + 16)^16 inside the
// admissible box, so one logarithm of their ratio replaces three.
double bb_log_kernel_value(std::int64_t y, std::int64_t m, double pi, double sigma) {
  const double a = pi / sigma;
  const double b = (1.0 - pi) / sigma;
  const double total = 1.0 / sigma;
  if (m <= kFusedLimit) {
    double pa = 1.0, pb = 1.0, pt = 1.0;
    for (std::int64_t j = 0; j < y; ++j) pa *= a + static_cast<double>(j);
    for (std::int64_t j = 0; j < m - y; ++j) pb *= b + static_cast<double>(j);
    for (std::int64_t j = 0; j < m; ++j) pt *= total + static_cast<double>(j);
    return std::log(pa * (pb / pt));
  }
  return log_gamma_ratio(a, static_cast<double>(y)) +
         log_gamma_ratio(b, static_cast<double>(m - y)) -
         log_gamma_ratio(total, static_cast<double>(m));
}

BBKernel bb_log_kernel(std::int64_t y, std::int64_t m, double pi, double sigma) {
  const double a = pi / sigma;
  const double b = (1.0 - pi) / sigma;
  const double total = 1.0 / sigma;
  if (m <= kFusedLimit) {
    double pa = 1.0, pb = 1.0, pt = 1.0, ra = 0.0, rb = 0.0, rt = 0.0;
    for (std::int64_t j = 0; j < y; ++j) {
      const double t = a + static_cast<double>(j);
      pa *= t;
      ra += 1.0 / t;
    }
    for (std::int64_t j = 0; j < m - y; ++j) {
      const double t = b + static_cast<double>(j);
      pb *= t;
      rb += 1.0 / t;
    }
    for (std::int64_t j = 0; j < m; ++j) {
      const double t = total + static_cast<double>(j);
      pt *= t;
      rt += 1.0 / t;
    }
    const double da = ra - rt;
    const double db = rb - rt;
    return {std::log(pa * (pb / pt)), (da - db) / sigma, -(a * da + b * db)};
  }
  const double da = digamma_ratio(a, y) - digamma_ratio(total, m);
  const double db = digamma_ratio(b, m - y) - digamma_ratio(total, m);
  return {bb_log_kernel_value(y, m, pi, sigma), (da - db) / sigma, -(a * da + b * db)};
}

}  // namespace detail

double binom_log_pmf(BoundedCount obs, double pi) {
  obs.validate();
  require_in(pi, admissible::kProbabilityMin, admissible::kProbabilityMax, "pi");
  const auto y = static_cast<double>(obs.y);
  const auto failures = static_cast<double>(obs.m - obs.y);
  return log_choose(obs.m, obs.y) + y * std::log(pi) + failures * std::log1p(-pi);
}

double bb_log_pmf(BoundedCount obs, BBParams p) {
  obs.validate();
  p.validate();
  return log_choose(obs.m, obs.y) + detail::bb_log_kernel_value(obs.y, obs.m, p.pi, p.sigma);
}

double cbb_log_pmf(BoundedCount obs, CBBParams p) {
  obs.validate();
  p.validate();
  const double reference = detail::bb_log_kernel_value(obs.y, obs.m, p.pi, p.sigma);
  const double contaminant = detail::bb_log_kernel_value(obs.y, obs.m, p.pi, p.eta * p.sigma);
  return log_choose(obs.m, obs.y) +
         log_sum_exp(std::log1p(-p.delta) + reference, std::log(p.delta) + contaminant);
}

MomentSet binom_moments(std::int64_t m, double pi) {
  require_trials(m);
  require_in(pi, admissible::kProbabilityMin, admissible::kProbabilityMax, "pi");
  const double mpq = static_cast<double>(m) * pi * (1.0 - pi);
  return {static_cast<double>(m) * pi, mpq, (1.0 - 2.0 * pi) / std::sqrt(mpq),
          (1.0 - 6.0 * pi * (1.0 - pi)) / mpq};
}

MomentSet bb_moments(std::int64_t m, BBParams p) {
  require_trials(m);
  p.validate();
  const double md = static_cast<double>(m);
  const double pi = p.pi;
  const double s = p.sigma;
  const double pq = pi * (1.0 - pi);
  const double variance = md * pq * (1.0 + md * s) / (1.0 + s);
  const double skewness = (1.0 - 2.0 * pi) * (2.0 * md * s + 1.0) / ((2.0 * s + 1.0) * std::sqrt(variance));
  // Numerator sign chosen so that σ → 0 recovers the binomial (1 − 6π(1−π)) / (mπ(1−π)).
  const double numerator = (s + 1.0) * (s * (6.0 * md * (md * s + 1.0) - 1.0) + 1.0) -
                           6.0 * pq * (md * (6.0 * s + 5.0) * s * (md * s + 1.0) + s + 1.0);
  const double denominator = pq * md * (2.0 * s + 1.0) * (3.0 * s + 1.0) * (md * s + 1.0);
  return {md * pi, variance, skewness, numerator / denominator};
}

MomentSet cbb_moments(std::int64_t m, CBBParams p) {
  require_trials(m);
  p.validate();
  const double md = static_cast<double>(m);
  const double pi = p.pi;
  const double pq = pi * (1.0 - pi);
  const double delta = p.delta;

  // Per-component central moments (both components share the mean mπ).
  auto second = [&](double s) { return md * pq * (1.0 + md * s) / (1.0 + s); };
  auto third = [&](double s) {
    return md * pq * (1.0 - 2.0 * pi) * (1.0 + md * s) * (1.0 + 2.0 * md * s) /
           ((1.0 + s) * (1.0 + 2.0 * s));
  };
  auto fourth_over_mpq = [&](double s) {
    return (md * s + 1.0) *
           (6.0 * (3.0 * (pi - 1.0) * pi + 1.0) * md * md * s * s +
            3.0 * md * s * (2.0 - (pi - 1.0) * pi * (md - 6.0)) - 3.0 * (pi - 1.0) * pi * (md - 2.0) -
            s + 1.0) /
           ((s + 1.0) * (2.0 * s + 1.0) * (3.0 * s + 1.0));
  };

  const double s_ref = p.sigma;
  const double s_con = p.eta * p.sigma;
  const double variance = (1.0 - delta) * second(s_ref) + delta * second(s_con);
  const double skewness =
      ((1.0 - delta) * third(s_ref) + delta * third(s_con)) / std::pow(variance, 1.5);
  const double excess_kurtosis =
      -3.0 + md * pq / (variance * variance) *
                 ((1.0 - delta) * fourth_over_mpq(s_ref) + delta * fourth_over_mpq(s_con));
  return {md * pi, variance, skewness, excess_kurtosis};
}

MomentSet brute_force_moments(std::int64_t m,
                              const std::function<double(std::int64_t)>& log_pmf) {
  require_trials(m);
  std::vector<long double> pmf(static_cast<std::size_t>(m + 1));
  long double total = 0.0L;
  for (std::int64_t y = 0; y <= m; ++y) {
    pmf[static_cast<std::size_t>(y)] = std::exp(static_cast<long double>(log_pmf(y)));
    total += pmf[static_cast<std::size_t>(y)];
  }
  if (std::abs(static_cast<double>(total) - 1.0) > 1e-9) {
    throw std::domain_error("brute_force_moments: pmf sums to " +
                            std::to_string(static_cast<double>(total)));
  }
  long double mean = 0.0L;
  for (std::int64_t y = 0; y <= m; ++y) mean += static_cast<long double>(y) * pmf[static_cast<std::size_t>(y)];
  long double c2 = 0.0L, c3 = 0.0L, c4 = 0.0L;
  for (std::int64_t y = 0; y <= m; ++y) {
    const long double d = static_cast<long double>(y) - mean;
    const long double w = pmf[static_cast<std::size_t>(y)];
    c2 += d * d * w;
    c3 += d * d * d * w;
    c4 += d * d * d * d * w;
  }
  const double variance = static_cast<double>(c2);
  return {static_cast<double>(mean), variance,
          static_cast<double>(c3 / std::pow(c2, 1.5L)),
          static_cast<double>(c4 / (c2 * c2) - 3.0L)};
}

std::vector<BoundedCount> cbb_sample(std::size_t count, std::int64_t m, CBBParams p,
                                     std::uint64_t seed) {
  require_trials(m);
  p.validate();
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution contaminated(p.delta);
  std::vector<BoundedCount> draws;
  draws.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double scale = contaminated(rng) ? p.eta * p.sigma : p.sigma;
    const double log_a = log_gamma_variate(rng, p.pi / scale);
    const double log_b = log_gamma_variate(rng, (1.0 - p.pi) / scale);
    const double success = 1.0 / (1.0 + std::exp(log_b - log_a));
    std::binomial_distribution<std::int64_t> binomial(m, success);
    draws.push_back({binomial(rng), m});
  }
  return draws;
}

}  // namespace cbbreg
