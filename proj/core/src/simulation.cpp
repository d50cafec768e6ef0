#include "cbbreg/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cbbreg/distributions.hpp"
#include "cbbreg/links.hpp"

namespace cbbreg {
namespace {

constexpr double kMaxFailureRate = 0.10;
constexpr Family kFamilies[] = {Family::binomial, Family::beta_binomial,
                                Family::contaminated_beta_binomial};

std::size_t replaced_count(std::size_t n, double fraction) {
  // The small offset keeps products like 0.05·500 from rounding up to 26.
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

struct ReplicationResult {
  // [fraction][family] → estimated β, empty on failure
  std::vector<std::vector<std::vector<double>>> estimates;
  std::vector<std::string> errors;
  std::size_t non_converged = 0;
};

ReplicationResult run_replication(const StudyConfig& config, const FitControl& control,
                                  std::size_t replication) {
  const std::uint64_t stream = config.seed + replication;
  const Dataset base = generate_binomial_data(config.n, config.m, config.true_beta,
                                              derive_seed(stream, 0));
  ModelSpec spec;
  for (std::size_t j = 0; j < base.covariate_names.size(); ++j) {
    spec.pi_terms.push_back(base.covariate_names[j]);
  }

  ReplicationResult out;
  out.estimates.resize(config.fractions.size());
  for (std::size_t f = 0; f < config.fractions.size(); ++f) {
    out.estimates[f].resize(std::size(kFamilies));
    const Dataset data = contaminate(base, config.fractions[f], derive_seed(stream, f + 1));
    try {
      const NestedFits fits = fit_nested(data, spec, control);
      const FitResult* results[] = {&fits.binomial, &fits.beta_binomial, &fits.contaminated};
      for (std::size_t k = 0; k < std::size(kFamilies); ++k) {
        const auto& beta = results[k]->coefficients.beta;
        if (!beta.allFinite() || !std::isfinite(results[k]->log_likelihood)) {
          std::ostringstream msg;
          msg << "replication " << replication << ", fraction " << config.fractions[f] << ", "
              << to_string(kFamilies[k]) << ": non-finite estimate";
          out.errors.push_back(msg.str());
          continue;
        }
        if (!results[k]->converged) ++out.non_converged;
        out.estimates[f][k].assign(beta.data(), beta.data() + beta.size());
      }
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "replication " << replication << ", fraction " << config.fractions[f] << ": "
          << e.what();
      out.errors.push_back(msg.str());
    }
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Dataset generate_binomial_data(std::size_t n, std::int64_t m, const std::vector<double>& beta,
                               std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_binomial_data: n must be >= 1");
  if (m < 1) throw std::invalid_argument("generate_binomial_data: m must be >= 1");
  if (beta.empty()) throw std::invalid_argument("generate_binomial_data: beta needs an intercept");

  const std::size_t p = beta.size() - 1;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset data;
  data.y.resize(n);
  data.m.assign(n, m);
  data.covariates.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j) {
    data.covariate_names.push_back(p == 1 ? "x" : "x" + std::to_string(j + 1));
  }
  for (std::size_t i = 0; i < n; ++i) {
    double eta = beta[0];
    for (std::size_t j = 0; j < p; ++j) {
      const double x = unit(rng);
      data.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
      eta += beta[j + 1] * x;
    }
    std::binomial_distribution<std::int64_t> draw(m, apply_inverse_link(LinkKind::logit, eta));
    data.y[i] = draw(rng);
  }
  return data;
}

Dataset contaminate(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("contaminate: fraction must lie in [0, 1)");
  }
  Dataset out = data;
  const std::size_t n = data.size();
  const std::size_t count = std::min(n, replaced_count(n, fraction));
  if (count == 0) return out;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> index(n);
  std::iota(index.begin(), index.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(index[i], index[pick(rng)]);
  }
  std::vector<std::size_t> chosen(index.begin(), index.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());
  for (const std::size_t row : chosen) {
    std::uniform_int_distribution<std::int64_t> value(0, out.m[row]);
    out.y[row] = value(rng);
  }
  std::vector<std::size_t> merged;
  std::set_union(data.replaced_rows.begin(), data.replaced_rows.end(), chosen.begin(),
                 chosen.end(), std::back_inserter(merged));
  out.replaced_rows = std::move(merged);
  return out;
}

Dataset simulate_response(const Dataset& data, const ModelSpec& spec, const Coefficients& coeffs,
                          std::uint64_t seed) {
  const Model model(data, spec);
  const RowParameters p = model.row_parameters(coeffs);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint64_t> bits;

  Dataset out = data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    switch (spec.family) {
      case Family::binomial: {
        std::binomial_distribution<std::int64_t> draw(data.m[i], p.pi[row]);
        out.y[i] = draw(rng);
        break;
      }
      case Family::beta_binomial:
        out.y[i] = cbb_sample(1, data.m[i], {p.pi[row], p.sigma[row], 0.5, 1.0 + 1e-12}, bits(rng))
                       .front()
                       .y;
        break;
      case Family::contaminated_beta_binomial:
        out.y[i] = cbb_sample(1, data.m[i], {p.pi[row], p.sigma[row], p.delta[row], p.eta[row]},
                              bits(rng))
                       .front()
                       .y;
        break;
    }
  }
  out.replaced_rows.clear();
  return out;
}

void StudyConfig::validate() const {
  if (n == 0) throw std::invalid_argument("study: n must be >= 1");
  if (m < 1) throw std::invalid_argument("study: m must be >= 1");
  if (true_beta.empty()) throw std::invalid_argument("study: true_beta needs an intercept");
  if (replications == 0) throw std::invalid_argument("study: replications must be >= 1");
  if (fractions.empty()) throw std::invalid_argument("study: at least one fraction is required");
  for (const double f : fractions) {
    if (!(f >= 0.0 && f < 1.0)) {
      throw std::invalid_argument("study: contamination fractions must lie in [0, 1)");
    }
  }
}

const StudyCell& StudyReport::cell(Family family, double fraction, std::size_t coefficient) const {
  for (const auto& c : cells) {
    if (c.family == family && c.fraction == fraction && c.coefficient == coefficient) return c;
  }
  throw std::out_of_range("no study cell for the requested family/fraction/coefficient");
}

StudyReport run_sensitivity_study(const StudyConfig& config, const FitControl& control) {
  config.validate();
  control.validate();
  const std::size_t reps = config.replications;
  std::vector<ReplicationResult> results(reps);

  unsigned workers = config.threads ? config.threads : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(reps)));
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr fatal;
  auto work = [&] {
    for (std::size_t r = next++; r < reps; r = next++) {
      try {
        results[r] = run_replication(config, control, r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  StudyReport report;
  report.config = config;
  const std::size_t p = config.true_beta.size();
  for (std::size_t f = 0; f < config.fractions.size(); ++f) {
    for (std::size_t k = 0; k < std::size(kFamilies); ++k) {
      for (std::size_t j = 0; j < p; ++j) {
        StudyCell cell;
        cell.family = kFamilies[k];
        cell.fraction = config.fractions[f];
        cell.coefficient = j;
        double sum = 0.0, sum_sq = 0.0;
        for (const auto& r : results) {
          const auto& est = r.estimates[f][k];
          if (est.empty()) continue;
          const double err = est[j] - config.true_beta[j];
          sum += err;
          sum_sq += err * err;
          ++cell.fits;
        }
        if (cell.fits > 0) {
          cell.bias = sum / static_cast<double>(cell.fits);
          cell.mse = sum_sq / static_cast<double>(cell.fits);
        } else {
          cell.bias = cell.mse = std::nan("");
        }
        report.cells.push_back(cell);
      }
    }
  }
  for (const auto& r : results) {
    report.non_converged += r.non_converged;
    for (const auto& e : r.errors) report.failure_messages.push_back(e);
  }
  std::size_t failed_fits = 0;
  for (const auto& r : results) {
    for (const auto& per_fraction : r.estimates) {
      for (const auto& est : per_fraction) failed_fits += est.empty() ? 1 : 0;
    }
  }
  report.failures = failed_fits;
  const double total = static_cast<double>(reps * config.fractions.size() * std::size(kFamilies));
  if (static_cast<double>(failed_fits) > kMaxFailureRate * total) {
    std::ostringstream msg;
    msg << "sensitivity study: " << failed_fits << " of " << total
        << " fits failed (more than 10%)";
    if (!report.failure_messages.empty()) msg << "; first: " << report.failure_messages.front();
    throw std::runtime_error(msg.str());
  }
  return report;
}

}  // namespace cbbreg
