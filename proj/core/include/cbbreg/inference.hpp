#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cbbreg/optim.hpp"
#include "cbbreg/regression.hpp"

namespace cbbreg {

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
  double hqic = 0.0;
};

/// AIC = 2k − 2l, BIC = k ln n − 2l, HQIC = 2k ln ln n − 2l.
InformationCriteria information_criteria(double log_likelihood, std::size_t k, std::size_t n);

struct LRTestResult {
  double statistic = 0.0;
  int df = 1;
  double p_value = 1.0;
};

/// Likelihood-ratio test of a nested null model; the statistic is clamped at 0.
LRTestResult lr_test(double loglik_null, double loglik_alt, int df);

struct HessianSummary {
  Eigen::MatrixXd hessian;     // symmetrized
  Eigen::MatrixXd covariance;  // (−H)⁻¹ when ok, else empty
  Eigen::VectorXd standard_errors;
  bool ok = false;
  double condition_number = 0.0;
  double asymmetry = 0.0;  // max |Hᵢⱼ − Hⱼᵢ| before symmetrization
};

/// Standard errors from the finite-difference Hessian of a log-likelihood at its maximizer.
HessianSummary hessian_standard_errors(const optim::Objective& log_likelihood,
                                       const Eigen::VectorXd& theta);

struct InferenceReport {
  Family family = Family::contaminated_beta_binomial;
  std::vector<std::string> parameter_names;
  Eigen::VectorXd estimates;
  Eigen::VectorXd standard_errors;  // NaN entries when !hessian_ok
  std::vector<bool> unreliable;     // coefficient sits where the likelihood is nearly flat
  double log_likelihood = 0.0;
  std::size_t parameters = 0;
  std::size_t observations = 0;
  double aic = 0.0;
  double bic = 0.0;
  double hqic = 0.0;
  bool hessian_ok = false;
  double condition_number = 0.0;
  double hessian_asymmetry = 0.0;
  std::vector<std::string> diagnostics;
};

/// SEs and information criteria for a fit of `fit.family` with the predictors of `spec`.
InferenceReport standard_errors(const Dataset& data, const ModelSpec& spec, const FitResult& fit);

struct ComparisonEntry {
  Family family = Family::binomial;
  std::size_t parameters = 0;
  double log_likelihood = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  double hqic = 0.0;
  int aic_rank = 0;  // 1 = smallest criterion
  int bic_rank = 0;
  int hqic_rank = 0;
};

struct NestedTest {
  Family null_family = Family::binomial;
  Family alternative_family = Family::beta_binomial;
  LRTestResult result;
};

struct ModelComparison {
  std::vector<ComparisonEntry> entries;
  /// LR tests between each pair of consecutive nested families present.
  std::vector<NestedTest> tests;
};

ModelComparison compare_models(const std::vector<InferenceReport>& reports);

}  // namespace cbbreg
