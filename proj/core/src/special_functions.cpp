#include "cbbreg/special_functions.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cbbreg {
namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178032973640562;

// Below this argument the Stirling tail is not accurate to double precision.
constexpr double kStirlingThreshold = 20.0;
constexpr std::int64_t kDirectSumLimit = 16;

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::domain_error(std::string(what) + ": argument must be finite and > 0, got " +
                            std::to_string(x));
  }
}

// Stirling correction S(x) with ln Γ(x) = (x − ½)ln x − x + ½ln 2π + S(x).
double stirling_tail(double x) {
  const double r = 1.0 / x;
  const double r2 = r * r;
  return r * (1.0 / 12.0 +
              r2 * (-1.0 / 360.0 + r2 * (1.0 / 1260.0 + r2 * (-1.0 / 1680.0 + r2 * (1.0 / 1188.0)))));
}

// Sum of ln(a + j) for j in [0, k), with logs taken over chunks of products.
double log_rising_direct(double a, std::int64_t k) {
  double total = 0.0;
  double product = 1.0;
  int in_chunk = 0;
  for (std::int64_t j = 0; j < k; ++j) {
    product *= a + static_cast<double>(j);
    if (++in_chunk == 8) {
      total += std::log(product);
      product = 1.0;
      in_chunk = 0;
    }
  }
  return total + std::log(product);
}

// Asymptotic ψ(x) − ln x for large x.
double digamma_tail(double x) {
  const double r = 1.0 / x;
  const double r2 = r * r;
  return -0.5 * r -
         r2 * (1.0 / 12.0 -
               r2 * (1.0 / 120.0 -
                     r2 * (1.0 / 252.0 -
                           r2 * (1.0 / 240.0 - r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0))))));
}

bool is_integral(double k) { return k == std::floor(k) && k < 9.0e15; }

}  // namespace

double log_gamma(double x) {
  require_positive(x, "log_gamma");
  static constexpr std::array<double, 14> kCoefficients = {
      57.1562356658629235,     -59.5979603554754912,    14.1360979747417471,
      -0.491913816097620199,   .339946499848118887e-4,  .465236289270485756e-4,
      -.983744753048795646e-4, .158088703224912494e-3,  -.210264441724104883e-3,
      .217439618115212643e-3,  -.164318106536763890e-3, .844182239838527433e-4,
      -.261908384015814087e-4, .368991826595316234e-5};
  double denominator = x;
  double series = 0.999999999999997092;
  for (double c : kCoefficients) {
    denominator += 1.0;
    series += c / denominator;
  }
  const double shifted = x + 5.24218750000000000;  // g + ½ with g = 607/128
  return (x + 0.5) * std::log(shifted) - shifted + std::log(2.5066282746310005 * series / x);
}

double log_gamma_ratio(double a, double k) {
  require_positive(a, "log_gamma_ratio");
  if (!(k >= 0.0) || !std::isfinite(k)) {
    throw std::domain_error("log_gamma_ratio: shift must be finite and >= 0");
  }
  if (k == 0.0) return 0.0;
  if (is_integral(k) && k <= static_cast<double>(kDirectSumLimit)) {
    return log_rising_direct(a, static_cast<std::int64_t>(k));
  }
  if (a >= kStirlingThreshold) {
    const double b = a + k;
    return (a - 0.5) * std::log1p(k / a) + k * std::log(b) - k + stirling_tail(b) -
           stirling_tail(a);
  }
  return log_gamma(a + k) - log_gamma(a);
}

double log_beta(double a, double b) {
  require_positive(a, "log_beta");
  require_positive(b, "log_beta");
  const double large = std::max(a, b);
  const double small = std::min(a, b);
  return log_gamma(small) - log_gamma_ratio(large, small);
}

double log_choose(std::int64_t m, std::int64_t y) {
  if (m < 0 || y < 0 || y > m) {
    throw std::domain_error("log_choose: require 0 <= y <= m, got m=" + std::to_string(m) +
                            ", y=" + std::to_string(y));
  }
  const std::int64_t k = std::min(y, m - y);
  if (k == 0) return 0.0;
  const double base = static_cast<double>(m - k + 1);
  if (k <= kDirectSumLimit) {
    double product = 1.0;
    for (std::int64_t j = 0; j < k; ++j) {
      product *= (base + static_cast<double>(j)) / static_cast<double>(j + 1);
    }
    return std::log(product);
  }
  return log_gamma_ratio(base, static_cast<double>(k)) -
         log_gamma_ratio(1.0, static_cast<double>(k));
}

double digamma(double x) {
  require_positive(x, "digamma");
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  return shift + std::log(x) + digamma_tail(x);
}

double digamma_ratio(double a, std::int64_t k) {
  require_positive(a, "digamma_ratio");
  if (k < 0) throw std::domain_error("digamma_ratio: shift must be >= 0");
  if (k <= 32) {
    double total = 0.0;
    for (std::int64_t j = 0; j < k; ++j) total += 1.0 / (a + static_cast<double>(j));
    return total;
  }
  if (a >= 10.0) {
    const double b = a + static_cast<double>(k);
    return std::log1p(static_cast<double>(k) / a) + digamma_tail(b) - digamma_tail(a);
  }
  return digamma(a + static_cast<double>(k)) - digamma(a);
}

double regularized_gamma_q(double s, double x) {
  require_positive(s, "regularized_gamma_q");
  if (!(x >= 0.0)) throw std::domain_error("regularized_gamma_q: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;

  constexpr int kMaxTerms = 10000;
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  const double log_prefactor = -x + s * std::log(x) - log_gamma(s);

  if (x < s + 1.0) {
    // Series for P(s, x).
    double term = 1.0 / s;
    double sum = term;
    double denom = s;
    for (int n = 0; n < kMaxTerms; ++n) {
      denom += 1.0;
      term *= x / denom;
      sum += term;
      if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return 1.0 - sum * std::exp(log_prefactor);
  }

  // Continued fraction for Q(s, x), modified Lentz.
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - s;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - s);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_prefactor) * h;
}

double chi_square_survival(double x, std::int64_t df) {
  if (df < 1) throw std::domain_error("chi_square_survival: df must be >= 1");
  if (!(x >= 0.0)) throw std::domain_error("chi_square_survival: x must be >= 0");
  return regularized_gamma_q(0.5 * static_cast<double>(df), 0.5 * x);
}

}  // namespace cbbreg
