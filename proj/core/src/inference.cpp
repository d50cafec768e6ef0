#include "cbbreg/inference.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cbbreg/special_functions.hpp"

namespace cbbreg {
namespace {

constexpr double kFlatPredictor = 30.0;

}  // namespace

InformationCriteria information_criteria(double log_likelihood, std::size_t k, std::size_t n) {
  const double kd = static_cast<double>(k);
  const double ln_n = std::log(static_cast<double>(n));
  InformationCriteria ic;
  ic.aic = 2.0 * kd - 2.0 * log_likelihood;
  ic.bic = ln_n * kd - 2.0 * log_likelihood;
  ic.hqic = 2.0 * std::log(ln_n) * kd - 2.0 * log_likelihood;
  if (k == 0) {
    // ln ln n is undefined for n = 1; with no parameters the penalty is zero anyway.
    ic.bic = ic.hqic = -2.0 * log_likelihood;
  }
  return ic;
}

LRTestResult lr_test(double loglik_null, double loglik_alt, int df) {
  if (df <= 0) throw std::invalid_argument("lr_test: df must be >= 1");
  LRTestResult r;
  r.df = df;
  r.statistic = std::max(0.0, -2.0 * (loglik_null - loglik_alt));
  r.p_value = chi_square_survival(r.statistic, df);
  return r;
}

HessianSummary hessian_standard_errors(const optim::Objective& log_likelihood,
                                       const Eigen::VectorXd& theta) {
  HessianSummary s;
  const Eigen::Index n = theta.size();
  const Eigen::MatrixXd raw = optim::numerical_hessian(log_likelihood, theta);
  s.asymmetry = n > 0 ? (raw - raw.transpose()).cwiseAbs().maxCoeff() : 0.0;
  s.hessian = 0.5 * (raw + raw.transpose());
  s.standard_errors = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  if (n == 0 || !s.hessian.allFinite()) return s;

  const Eigen::MatrixXd information = -s.hessian;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(information);
  const double lo = eigen.eigenvalues().minCoeff();
  const double hi = eigen.eigenvalues().maxCoeff();
  s.condition_number = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  Eigen::LLT<Eigen::MatrixXd> llt(information);
  if (lo <= 0.0 || llt.info() != Eigen::Success) return s;

  s.covariance = llt.solve(Eigen::MatrixXd::Identity(n, n));
  s.standard_errors = s.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  s.ok = s.standard_errors.allFinite();
  return s;
}

InferenceReport standard_errors(const Dataset& data, const ModelSpec& spec, const FitResult& fit) {
  ModelSpec fitted = spec;
  fitted.family = fit.family;
  const Model model(data, fitted);
  model.check(fit.coefficients);

  InferenceReport report;
  report.family = fit.family;
  report.parameter_names = model.parameter_names();
  report.estimates = model.flatten(fit.coefficients);
  report.log_likelihood = fit.log_likelihood;
  report.parameters = model.parameter_count();
  report.observations = model.rows();
  const auto ic = information_criteria(fit.log_likelihood, report.parameters, report.observations);
  report.aic = ic.aic;
  report.bic = ic.bic;
  report.hqic = ic.hqic;

  if (!fit.converged) report.diagnostics.push_back("fit did not converge; SEs may be unreliable");

  const HessianSummary h = hessian_standard_errors(model.log_likelihood_objective(), report.estimates);
  report.standard_errors = h.standard_errors;
  report.hessian_ok = h.ok;
  report.condition_number = h.condition_number;
  report.hessian_asymmetry = h.asymmetry;
  if (!h.ok) {
    std::ostringstream msg;
    msg << "negative Hessian is not positive definite (condition number " << h.condition_number
        << "); SEs omitted";
    report.diagnostics.push_back(msg.str());
  }

  report.unreliable.assign(static_cast<std::size_t>(report.estimates.size()), false);
  std::size_t offset = 0;
  auto flag_block = [&](const Eigen::MatrixXd& design, const Eigen::VectorXd& coef) {
    if (coef.size() == 0) return;
    const bool flat = (design * coef).cwiseAbs().maxCoeff() > kFlatPredictor;
    for (Eigen::Index j = 0; j < coef.size(); ++j) report.unreliable[offset + static_cast<std::size_t>(j)] = flat;
    offset += static_cast<std::size_t>(coef.size());
  };
  const Coefficients& c = fit.coefficients;
  flag_block(model.pi_design(), c.beta);
  if (fit.family != Family::binomial) flag_block(model.sigma_design(), c.alpha);
  if (fit.family == Family::contaminated_beta_binomial) {
    flag_block(model.delta_design(), c.gamma);
    flag_block(model.eta_design(), c.lambda);
  }
  return report;
}

ModelComparison compare_models(const std::vector<InferenceReport>& reports) {
  ModelComparison out;
  for (const auto& r : reports) {
    ComparisonEntry e;
    e.family = r.family;
    e.parameters = r.parameters;
    e.log_likelihood = r.log_likelihood;
    e.aic = r.aic;
    e.bic = r.bic;
    e.hqic = r.hqic;
    out.entries.push_back(e);
  }
  auto rank_by = [&](double ComparisonEntry::*criterion, int ComparisonEntry::*rank) {
    for (auto& e : out.entries) {
      e.*rank = 1;
      for (const auto& other : out.entries) {
        if (other.*criterion < e.*criterion) ++(e.*rank);
      }
    }
  };
  rank_by(&ComparisonEntry::aic, &ComparisonEntry::aic_rank);
  rank_by(&ComparisonEntry::bic, &ComparisonEntry::bic_rank);
  rank_by(&ComparisonEntry::hqic, &ComparisonEntry::hqic_rank);

  std::vector<const ComparisonEntry*> ordered;
  for (const Family f : {Family::binomial, Family::beta_binomial, Family::contaminated_beta_binomial}) {
    for (const auto& e : out.entries) {
      if (e.family == f) {
        ordered.push_back(&e);
        break;
      }
    }
  }
  for (std::size_t i = 0; i + 1 < ordered.size(); ++i) {
    const auto& null = *ordered[i];
    const auto& alt = *ordered[i + 1];
    if (alt.parameters <= null.parameters) continue;
    NestedTest t;
    t.null_family = null.family;
    t.alternative_family = alt.family;
    t.result = lr_test(null.log_likelihood, alt.log_likelihood,
                       static_cast<int>(alt.parameters - null.parameters));
    out.tests.push_back(t);
  }
  return out;
}

}  // namespace cbbreg
