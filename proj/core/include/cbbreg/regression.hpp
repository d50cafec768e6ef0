#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cbbreg/optim.hpp"

namespace cbbreg {

enum class Family { binomial, beta_binomial, contaminated_beta_binomial };

std::string_view to_string(Family family);
/// Accepts "binom"/"binomial"/"b", "bb"/"beta_binomial", "cbb"/"contaminated_beta_binomial".
Family parse_family(std::string_view text);

/// Bounded-count observations with their covariates. `m` may differ per row.
struct Dataset {
  std::vector<std::int64_t> y;
  std::vector<std::int64_t> m;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // rows × covariate_names.size()
  /// Categorical columns: factor name → reference-coded indicator columns.
  std::map<std::string, std::vector<std::string>> factors;
  /// Rows whose response was overwritten by contaminate().
  std::vector<std::size_t> replaced_rows;

  std::size_t size() const { return y.size(); }
  void validate() const;
  std::optional<Eigen::Index> column_index(std::string_view name) const;
  /// Column names a formula term refers to: the column itself, or all
  /// indicator columns of a factor. Throws std::invalid_argument if unknown.
  std::vector<std::string> expand_term(const std::string& term) const;
  void add_covariate(std::string name, const Eigen::VectorXd& values);
};

/// Covariates for each linear predictor; an intercept is always included.
struct ModelSpec {
  std::vector<std::string> pi_terms;
  std::vector<std::string> sigma_terms;
  std::vector<std::string> delta_terms;
  std::vector<std::string> eta_terms;
  Family family = Family::contaminated_beta_binomial;
};

/// Regression coefficients for π (beta), σ (alpha), δ (gamma) and η (lambda).
/// Blocks a family does not use are empty.
struct Coefficients {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd gamma;
  Eigen::VectorXd lambda;
};

struct FitControl {
  double epsilon = 1e-10;
  int max_iterations = 1000;
  optim::Method inner_optimizer = optim::Method::quasi_newton;
  double inner_tolerance = 1e-10;
  int inner_max_iterations = 100;
  int restarts = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitResult {
  Family family = Family::contaminated_beta_binomial;
  Coefficients coefficients;
  double log_likelihood = 0.0;
  Eigen::VectorXd posterior_weights;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
  std::vector<std::string> diagnostics;
};

/// Per-row distribution parameters after the inverse links.
struct RowParameters {
  Eigen::ArrayXd pi;
  Eigen::ArrayXd sigma;
  Eigen::ArrayXd delta;
  Eigen::ArrayXd eta;
};

struct GammaUpdate {
  Eigen::VectorXd gamma;
  bool clamped = false;  // mean weight was 0 or 1 and had to be pulled inside (0,1)
};

struct Q2Update {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd lambda;
  double q2_before = 0.0;
  double q2_after = 0.0;
  bool lambda_frozen = false;
  bool optimizer_failed = false;  // no ascent found; current values were kept
};

/// A dataset bound to a model specification: design matrices, per-row
/// constants, and the likelihood machinery shared by every fitting routine.
class Model {
 public:
  Model(const Dataset& data, ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  Family family() const { return spec_.family; }
  std::size_t rows() const { return y_.size(); }

  const Eigen::MatrixXd& pi_design() const { return x_; }
  const Eigen::MatrixXd& sigma_design() const { return u_; }
  const Eigen::MatrixXd& delta_design() const { return v_; }
  const Eigen::MatrixXd& eta_design() const { return z_; }

  std::size_t parameter_count() const;
  std::vector<std::string> parameter_names() const;
  Coefficients zero_coefficients() const;
  void check(const Coefficients& coeffs) const;
  Eigen::VectorXd flatten(const Coefficients& coeffs) const;
  Coefficients unflatten(const Eigen::VectorXd& theta) const;

  RowParameters row_parameters(const Coefficients& coeffs) const;

  /// Observed-data log-likelihood under the model family.
  double log_likelihood(const Coefficients& coeffs) const;
  /// Same, with the gradient with respect to flatten(coeffs).
  double log_likelihood(const Coefficients& coeffs, Eigen::VectorXd& gradient) const;
  /// cBB log-likelihood together with the E-step weights at the same point.
  double log_likelihood_and_weights(const Coefficients& coeffs, Eigen::VectorXd& weights) const;
  /// Objective over flattened coefficients, for optimizers and Hessians.
  optim::Objective log_likelihood_objective() const;

  Eigen::VectorXd posterior_weights(const Coefficients& coeffs) const;

  double q1(const Eigen::VectorXd& weights, const Eigen::VectorXd& gamma) const;
  GammaUpdate update_gamma(const Eigen::VectorXd& weights, const Eigen::VectorXd& start) const;

  /// Expected complete-data kernel Σ (1−wᵢ) ln f_BB(yᵢ; πᵢ, σᵢ) + wᵢ ln f_BB(yᵢ; πᵢ, ηᵢσᵢ),
  /// without binomial coefficients.
  double q2(const Eigen::VectorXd& weights, const Coefficients& coeffs) const;
  Q2Update update_q2(const Eigen::VectorXd& weights, const Coefficients& current,
                     const FitControl& control) const;

 private:
  double cbb_pass(const Coefficients& coeffs, Eigen::VectorXd* gradient,
                  Eigen::VectorXd* weights) const;
  double q2_pass(const Eigen::VectorXd& weights, const Coefficients& coeffs, bool with_lambda,
                 Eigen::VectorXd* gradient) const;

  ModelSpec spec_;
  std::vector<std::int64_t> y_;
  std::vector<std::int64_t> m_;
  Eigen::VectorXd log_choose_;
  Eigen::MatrixXd x_, u_, v_, z_;
  std::vector<std::string> x_names_, u_names_, v_names_, z_names_;
};

RowParameters linear_predictors(const Dataset& data, const ModelSpec& spec,
                                const Coefficients& coeffs);
double observed_log_likelihood(const Dataset& data, const ModelSpec& spec,
                               const Coefficients& coeffs);
Eigen::VectorXd e_step(const Dataset& data, const ModelSpec& spec, const Coefficients& coeffs);
GammaUpdate m_step_gamma(const Eigen::VectorXd& weights, const Dataset& data,
                         const ModelSpec& spec,
                         const std::optional<Eigen::VectorXd>& warm_start = std::nullopt);
Q2Update m_step_q2(const Eigen::VectorXd& weights, const Dataset& data, const ModelSpec& spec,
                   const Coefficients& current, const FitControl& control);

/// Start values for the EM: a beta-binomial fit on the π and σ predictors,
/// δ⁽⁰⁾ = 0.05 and η⁽⁰⁾ = 1.5 (all other γ, λ entries zero).
Coefficients initialize(const Dataset& data, const ModelSpec& spec, const FitControl& control);

/// Maximum-likelihood fit. The contaminated family runs the EM algorithm;
/// the binomial and beta-binomial families maximize the likelihood directly.
FitResult fit(const Dataset& data, const ModelSpec& spec,
              const std::optional<Coefficients>& init, const FitControl& control);

struct NestedFits {
  FitResult binomial;
  FitResult beta_binomial;
  FitResult contaminated;
};

/// Fits B, BB and cBB sharing the π (and σ) predictors of `spec`; the BB fit
/// seeds the cBB EM, so this is cheaper than three separate fit() calls.
NestedFits fit_nested(const Dataset& data, const ModelSpec& spec, const FitControl& control);

}  // namespace cbbreg
