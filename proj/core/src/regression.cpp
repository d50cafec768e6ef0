#include "cbbreg/regression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cbbreg/distributions.hpp"
#include "cbbreg/links.hpp"
#include "cbbreg/special_functions.hpp"

namespace cbbreg {
namespace {

constexpr double kInitialDelta = 0.05;
constexpr double kInitialEta = 1.5;
constexpr double kRestartJitter = 0.25;
// Below this total posterior weight the contaminant component is empty and λ is unidentified.
constexpr double kLambdaFreezeMass = 1e-6;
constexpr double kUnreliablePredictor = 30.0;

double log_sum_exp(double a, double b) {
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

Eigen::VectorXd concat(std::initializer_list<const Eigen::VectorXd*> parts) {
  Eigen::Index total = 0;
  for (const auto* p : parts) total += p->size();
  Eigen::VectorXd out(total);
  Eigen::Index offset = 0;
  for (const auto* p : parts) {
    out.segment(offset, p->size()) = *p;
    offset += p->size();
  }
  return out;
}

bool uses_sigma(Family f) { return f != Family::binomial; }
bool uses_contamination(Family f) { return f == Family::contaminated_beta_binomial; }

}  // namespace

std::string_view to_string(Family family) {
  switch (family) {
    case Family::binomial:
      return "binomial";
    case Family::beta_binomial:
      return "beta_binomial";
    case Family::contaminated_beta_binomial:
      return "contaminated_beta_binomial";
  }
  return "unknown";
}

Family parse_family(std::string_view text) {
  if (text == "binom" || text == "binomial" || text == "b" || text == "B") return Family::binomial;
  if (text == "bb" || text == "beta_binomial" || text == "BB") return Family::beta_binomial;
  if (text == "cbb" || text == "contaminated_beta_binomial" || text == "cBB") {
    return Family::contaminated_beta_binomial;
  }
  throw std::invalid_argument("unknown family '" + std::string(text) +
                              "' (expected binom, bb or cbb)");
}

// ---------------------------------------------------------------------------
// Dataset

void Dataset::validate() const {
  if (m.size() != y.size()) throw std::invalid_argument("dataset: y and m lengths differ");
  if (static_cast<std::size_t>(covariates.rows()) != y.size() &&
      !(covariates.size() == 0 && covariate_names.empty())) {
    throw std::invalid_argument("dataset: covariate rows do not match responses");
  }
  if (static_cast<std::size_t>(covariates.cols()) != covariate_names.size()) {
    throw std::invalid_argument("dataset: covariate columns do not match names");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (m[i] < 1 || y[i] < 0 || y[i] > m[i]) {
      std::ostringstream msg;
      msg << "dataset row " << i << ": require 0 <= y <= m and m >= 1 (y=" << y[i]
          << ", m=" << m[i] << ")";
      throw std::invalid_argument(msg.str());
    }
  }
  if (covariates.size() > 0 && !covariates.allFinite()) {
    throw std::invalid_argument("dataset: non-finite covariate value");
  }
}

std::optional<Eigen::Index> Dataset::column_index(std::string_view name) const {
  for (std::size_t j = 0; j < covariate_names.size(); ++j) {
    if (covariate_names[j] == name) return static_cast<Eigen::Index>(j);
  }
  return std::nullopt;
}

std::vector<std::string> Dataset::expand_term(const std::string& term) const {
  if (const auto it = factors.find(term); it != factors.end()) return it->second;
  if (column_index(term)) return {term};
  throw std::invalid_argument("unknown covariate '" + term + "'");
}

void Dataset::add_covariate(std::string name, const Eigen::VectorXd& values) {
  if (static_cast<std::size_t>(values.size()) != y.size()) {
    throw std::invalid_argument("add_covariate: length mismatch for '" + name + "'");
  }
  if (covariates.rows() != values.size()) covariates.resize(values.size(), 0);
  covariates.conservativeResize(values.size(), covariates.cols() + 1);
  covariates.col(covariates.cols() - 1) = values;
  covariate_names.push_back(std::move(name));
}

// ---------------------------------------------------------------------------
// FitControl

void FitControl::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("FitControl: epsilon must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("FitControl: max_iterations must be >= 1");
  if (!(inner_tolerance > 0.0)) {
    throw std::invalid_argument("FitControl: inner_tolerance must be > 0");
  }
  if (inner_max_iterations < 1) {
    throw std::invalid_argument("FitControl: inner_max_iterations must be >= 1");
  }
  if (restarts < 0) throw std::invalid_argument("FitControl: restarts must be >= 0");
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const Dataset& data, ModelSpec spec) : spec_(std::move(spec)) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("dataset is empty");
  y_ = data.y;
  m_ = data.m;
  const auto n = static_cast<Eigen::Index>(data.size());
  log_choose_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    log_choose_[i] = log_choose(m_[static_cast<std::size_t>(i)], y_[static_cast<std::size_t>(i)]);
  }

  auto build = [&](const std::vector<std::string>& terms, std::vector<std::string>& names) {
    std::vector<std::string> columns;
    std::set<std::string> seen;
    for (const auto& term : terms) {
      for (auto& col : data.expand_term(term)) {
        if (seen.insert(col).second) columns.push_back(col);
      }
    }
    Eigen::MatrixXd design(n, static_cast<Eigen::Index>(columns.size()) + 1);
    design.col(0).setOnes();
    names = {"(Intercept)"};
    for (std::size_t j = 0; j < columns.size(); ++j) {
      design.col(static_cast<Eigen::Index>(j) + 1) = data.covariates.col(*data.column_index(columns[j]));
      names.push_back(columns[j]);
    }
    return design;
  };
  x_ = build(spec_.pi_terms, x_names_);
  u_ = build(spec_.sigma_terms, u_names_);
  v_ = build(spec_.delta_terms, v_names_);
  z_ = build(spec_.eta_terms, z_names_);
}

std::size_t Model::parameter_count() const {
  auto count = static_cast<std::size_t>(x_.cols());
  if (uses_sigma(family())) count += static_cast<std::size_t>(u_.cols());
  if (uses_contamination(family())) count += static_cast<std::size_t>(v_.cols() + z_.cols());
  return count;
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> names;
  auto add = [&](const char* block, const std::vector<std::string>& cols) {
    for (const auto& c : cols) names.push_back(std::string(block) + ":" + c);
  };
  add("beta", x_names_);
  if (uses_sigma(family())) add("alpha", u_names_);
  if (uses_contamination(family())) {
    add("gamma", v_names_);
    add("lambda", z_names_);
  }
  return names;
}

Coefficients Model::zero_coefficients() const {
  Coefficients c;
  c.beta = Eigen::VectorXd::Zero(x_.cols());
  if (uses_sigma(family())) c.alpha = Eigen::VectorXd::Zero(u_.cols());
  if (uses_contamination(family())) {
    c.gamma = Eigen::VectorXd::Zero(v_.cols());
    c.lambda = Eigen::VectorXd::Zero(z_.cols());
  }
  return c;
}

void Model::check(const Coefficients& c) const {
  auto expect = [](const Eigen::VectorXd& v, Eigen::Index n, const char* block) {
    if (v.size() != n) {
      std::ostringstream msg;
      msg << "coefficient block " << block << " has length " << v.size() << ", expected " << n;
      throw std::invalid_argument(msg.str());
    }
    if (!v.allFinite()) throw std::invalid_argument(std::string("non-finite coefficient in ") + block);
  };
  expect(c.beta, x_.cols(), "beta");
  if (uses_sigma(family())) expect(c.alpha, u_.cols(), "alpha");
  if (uses_contamination(family())) {
    expect(c.gamma, v_.cols(), "gamma");
    expect(c.lambda, z_.cols(), "lambda");
  }
}

Eigen::VectorXd Model::flatten(const Coefficients& c) const {
  switch (family()) {
    case Family::binomial:
      return c.beta;
    case Family::beta_binomial:
      return concat({&c.beta, &c.alpha});
    case Family::contaminated_beta_binomial:
      return concat({&c.beta, &c.alpha, &c.gamma, &c.lambda});
  }
  return {};
}

Coefficients Model::unflatten(const Eigen::VectorXd& theta) const {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) {
    throw std::invalid_argument("parameter vector has the wrong length");
  }
  Coefficients c;
  Eigen::Index offset = 0;
  auto take = [&](Eigen::Index n) {
    Eigen::VectorXd out = theta.segment(offset, n);
    offset += n;
    return out;
  };
  c.beta = take(x_.cols());
  if (uses_sigma(family())) c.alpha = take(u_.cols());
  if (uses_contamination(family())) {
    c.gamma = take(v_.cols());
    c.lambda = take(z_.cols());
  }
  return c;
}

RowParameters Model::row_parameters(const Coefficients& c) const {
  check(c);
  const auto n = static_cast<Eigen::Index>(rows());
  RowParameters p;
  p.pi = (x_ * c.beta).array().unaryExpr([](double t) { return apply_inverse_link(LinkKind::logit, t); });
  p.sigma = uses_sigma(family())
                ? Eigen::ArrayXd((u_ * c.alpha).array().unaryExpr(
                      [](double t) { return apply_inverse_link(LinkKind::log, t); }))
                : Eigen::ArrayXd::Zero(n);
  if (uses_contamination(family())) {
    p.delta = (v_ * c.gamma).array().unaryExpr(
        [](double t) { return apply_inverse_link(LinkKind::logit, t); });
    p.eta = (z_ * c.lambda).array().unaryExpr(
        [](double t) { return apply_inverse_link(LinkKind::shifted_log, t); });
  } else {
    p.delta = Eigen::ArrayXd::Zero(n);
    p.eta = Eigen::ArrayXd::Ones(n);
  }
  return p;
}

double Model::cbb_pass(const Coefficients& c, Eigen::VectorXd* gradient,
                       Eigen::VectorXd* weights) const {
  const auto n = static_cast<Eigen::Index>(rows());
  const Eigen::VectorXd t_pi = x_ * c.beta;
  const Eigen::VectorXd t_sigma = u_ * c.alpha;
  const Eigen::VectorXd t_delta = v_ * c.gamma;
  const Eigen::VectorXd t_eta = z_ * c.lambda;
  Eigen::VectorXd g_pi, g_sigma, g_delta, g_eta;
  if (gradient) {
    g_pi.resize(n);
    g_sigma.resize(n);
    g_delta.resize(n);
    g_eta.resize(n);
  }
  if (weights) weights->resize(n);

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto yi = y_[static_cast<std::size_t>(i)];
    const auto mi = m_[static_cast<std::size_t>(i)];
    const double pi = apply_inverse_link(LinkKind::logit, t_pi[i]);
    const double sigma = apply_inverse_link(LinkKind::log, t_sigma[i]);
    const double delta = apply_inverse_link(LinkKind::logit, t_delta[i]);
    const double eta = apply_inverse_link(LinkKind::shifted_log, t_eta[i]);
    const double inflated = std::min(eta * sigma, admissible::kDispersionMax);

    detail::BBKernel ref{}, con{};
    if (gradient) {
      ref = detail::bb_log_kernel(yi, mi, pi, sigma);
      con = detail::bb_log_kernel(yi, mi, pi, inflated);
    } else {
      ref.value = detail::bb_log_kernel_value(yi, mi, pi, sigma);
      con.value = detail::bb_log_kernel_value(yi, mi, pi, inflated);
    }
    const double l_ref = std::log1p(-delta) + ref.value;
    const double l_con = std::log(delta) + con.value;
    const double lse = log_sum_exp(l_ref, l_con);
    total += log_choose_[i] + lse;
    const double w = std::exp(l_con - lse);
    if (weights) (*weights)[i] = w;
    if (gradient) {
      const double dpi = inverse_link_derivative(LinkKind::logit, t_pi[i]);
      const double dls = inverse_link_derivative(LinkKind::log, t_sigma[i]) / sigma;
      const double ddelta = inverse_link_derivative(LinkKind::logit, t_delta[i]);
      const double dle = inverse_link_derivative(LinkKind::shifted_log, t_eta[i]) / eta;
      g_pi[i] = ((1.0 - w) * ref.d_pi + w * con.d_pi) * dpi;
      g_sigma[i] = ((1.0 - w) * ref.d_log_sigma + w * con.d_log_sigma) * dls;
      g_delta[i] = (w / delta - (1.0 - w) / (1.0 - delta)) * ddelta;
      g_eta[i] = w * con.d_log_sigma * dle;
    }
  }
  if (gradient) {
    const Eigen::VectorXd gb = x_.transpose() * g_pi;
    const Eigen::VectorXd ga = u_.transpose() * g_sigma;
    const Eigen::VectorXd gg = v_.transpose() * g_delta;
    const Eigen::VectorXd gl = z_.transpose() * g_eta;
    *gradient = concat({&gb, &ga, &gg, &gl});
  }
  return total;
}

double Model::log_likelihood(const Coefficients& c, Eigen::VectorXd& gradient) const {
  check(c);
  const auto n = static_cast<Eigen::Index>(rows());
  const Eigen::VectorXd t_pi = x_ * c.beta;
  switch (family()) {
    case Family::binomial: {
      Eigen::VectorXd g(n);
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto yi = static_cast<double>(y_[static_cast<std::size_t>(i)]);
        const auto mi = static_cast<double>(m_[static_cast<std::size_t>(i)]);
        const double pi = apply_inverse_link(LinkKind::logit, t_pi[i]);
        total += log_choose_[i] + yi * std::log(pi) + (mi - yi) * std::log1p(-pi);
        g[i] = (yi / pi - (mi - yi) / (1.0 - pi)) * inverse_link_derivative(LinkKind::logit, t_pi[i]);
      }
      gradient = x_.transpose() * g;
      return total;
    }
    case Family::beta_binomial: {
      const Eigen::VectorXd t_sigma = u_ * c.alpha;
      Eigen::VectorXd g_pi(n), g_sigma(n);
      double total = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double pi = apply_inverse_link(LinkKind::logit, t_pi[i]);
        const double sigma = apply_inverse_link(LinkKind::log, t_sigma[i]);
        const auto k = detail::bb_log_kernel(y_[static_cast<std::size_t>(i)],
                                             m_[static_cast<std::size_t>(i)], pi, sigma);
        total += log_choose_[i] + k.value;
        g_pi[i] = k.d_pi * inverse_link_derivative(LinkKind::logit, t_pi[i]);
        g_sigma[i] = k.d_log_sigma * inverse_link_derivative(LinkKind::log, t_sigma[i]) / sigma;
      }
      const Eigen::VectorXd gb = x_.transpose() * g_pi;
      const Eigen::VectorXd ga = u_.transpose() * g_sigma;
      gradient = concat({&gb, &ga});
      return total;
    }
    case Family::contaminated_beta_binomial:
      return cbb_pass(c, &gradient, nullptr);
  }
  return 0.0;
}

double Model::log_likelihood(const Coefficients& c) const {
  check(c);
  if (family() == Family::contaminated_beta_binomial) return cbb_pass(c, nullptr, nullptr);
  const auto n = static_cast<Eigen::Index>(rows());
  const Eigen::VectorXd t_pi = x_ * c.beta;
  double total = 0.0;
  if (family() == Family::binomial) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto yi = static_cast<double>(y_[static_cast<std::size_t>(i)]);
      const auto mi = static_cast<double>(m_[static_cast<std::size_t>(i)]);
      const double pi = apply_inverse_link(LinkKind::logit, t_pi[i]);
      total += log_choose_[i] + yi * std::log(pi) + (mi - yi) * std::log1p(-pi);
    }
    return total;
  }
  const Eigen::VectorXd t_sigma = u_ * c.alpha;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += log_choose_[i] +
             detail::bb_log_kernel_value(y_[static_cast<std::size_t>(i)],
                                         m_[static_cast<std::size_t>(i)],
                                         apply_inverse_link(LinkKind::logit, t_pi[i]),
                                         apply_inverse_link(LinkKind::log, t_sigma[i]));
  }
  return total;
}

double Model::log_likelihood_and_weights(const Coefficients& c, Eigen::VectorXd& weights) const {
  if (family() != Family::contaminated_beta_binomial) {
    throw std::logic_error("posterior weights require the contaminated beta-binomial family");
  }
  check(c);
  return cbb_pass(c, nullptr, &weights);
}

Eigen::VectorXd Model::posterior_weights(const Coefficients& c) const {
  Eigen::VectorXd w;
  log_likelihood_and_weights(c, w);
  return w;
}

optim::Objective Model::log_likelihood_objective() const {
  optim::Objective objective;
  objective.value = [this](const Eigen::VectorXd& theta) {
    return log_likelihood(unflatten(theta));
  };
  objective.value_and_gradient = [this](const Eigen::VectorXd& theta, Eigen::VectorXd& g) {
    return log_likelihood(unflatten(theta), g);
  };
  return objective;
}

double Model::q1(const Eigen::VectorXd& weights, const Eigen::VectorXd& gamma) const {
  const Eigen::VectorXd t = v_ * gamma;
  double total = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double delta = apply_inverse_link(LinkKind::logit, t[i]);
    total += (1.0 - weights[i]) * std::log1p(-delta) + weights[i] * std::log(delta);
  }
  return total;
}

GammaUpdate Model::update_gamma(const Eigen::VectorXd& weights,
                                const Eigen::VectorXd& start) const {
  if (weights.size() != static_cast<Eigen::Index>(rows())) {
    throw std::invalid_argument("weights length does not match the dataset");
  }
  if ((weights.array() < 0.0).any() || (weights.array() > 1.0).any()) {
    throw std::invalid_argument("posterior weights must lie in [0,1]");
  }
  GammaUpdate update;
  const double raw_mean = weights.mean();
  const double mean = std::clamp(raw_mean, 1e-10, 1.0 - 1e-10);
  update.clamped = raw_mean <= 0.0 || raw_mean >= 1.0;

  if (v_.cols() == 1) {
    update.gamma = Eigen::VectorXd::Constant(1, logit(mean));
    return update;
  }

  // Fractional-response logistic regression by damped Newton (IRLS).
  Eigen::VectorXd gamma = start;
  if (gamma.size() != v_.cols() || !gamma.allFinite()) {
    gamma = Eigen::VectorXd::Zero(v_.cols());
    gamma[0] = logit(mean);
  }
  double current = q1(weights, gamma);
  for (int iter = 0; iter < 200; ++iter) {
    const Eigen::VectorXd t = v_ * gamma;
    Eigen::VectorXd residual(t.size());
    Eigen::VectorXd curvature(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double delta = apply_inverse_link(LinkKind::logit, t[i]);
      residual[i] = weights[i] - delta;
      curvature[i] = delta * (1.0 - delta);
    }
    const Eigen::VectorXd score = v_.transpose() * residual;
    Eigen::MatrixXd information = v_.transpose() * curvature.asDiagonal() * v_;
    information.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = information.ldlt().solve(score);
    if (!step.allFinite()) break;

    double scale = 1.0;
    bool moved = false;
    for (int halving = 0; halving < 40; ++halving) {
      const Eigen::VectorXd candidate = gamma + scale * step;
      const double value = q1(weights, candidate);
      if (value >= current) {
        moved = value > current || scale * step.lpNorm<Eigen::Infinity>() < 1e-12;
        gamma = candidate;
        current = value;
        break;
      }
      scale *= 0.5;
    }
    if (!moved || scale * step.lpNorm<Eigen::Infinity>() < 1e-11) break;
  }
  update.gamma = gamma;
  return update;
}

double Model::q2_pass(const Eigen::VectorXd& weights, const Coefficients& c, bool with_lambda,
                      Eigen::VectorXd* gradient) const {
  const auto n = static_cast<Eigen::Index>(rows());
  const Eigen::VectorXd t_pi = x_ * c.beta;
  const Eigen::VectorXd t_sigma = u_ * c.alpha;
  const Eigen::VectorXd t_eta = z_ * c.lambda;
  Eigen::VectorXd g_pi, g_sigma, g_eta;
  if (gradient) {
    g_pi.resize(n);
    g_sigma.resize(n);
    g_eta.resize(n);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto yi = y_[static_cast<std::size_t>(i)];
    const auto mi = m_[static_cast<std::size_t>(i)];
    const double w = weights[i];
    const double pi = apply_inverse_link(LinkKind::logit, t_pi[i]);
    const double sigma = apply_inverse_link(LinkKind::log, t_sigma[i]);
    const double eta = apply_inverse_link(LinkKind::shifted_log, t_eta[i]);
    const double inflated = std::min(eta * sigma, admissible::kDispersionMax);
    if (gradient) {
      const auto ref = detail::bb_log_kernel(yi, mi, pi, sigma);
      const auto con = detail::bb_log_kernel(yi, mi, pi, inflated);
      total += (1.0 - w) * ref.value + w * con.value;
      g_pi[i] = ((1.0 - w) * ref.d_pi + w * con.d_pi) *
                inverse_link_derivative(LinkKind::logit, t_pi[i]);
      g_sigma[i] = ((1.0 - w) * ref.d_log_sigma + w * con.d_log_sigma) *
                   inverse_link_derivative(LinkKind::log, t_sigma[i]) / sigma;
      g_eta[i] = w * con.d_log_sigma * inverse_link_derivative(LinkKind::shifted_log, t_eta[i]) / eta;
    } else {
      total += (1.0 - w) * detail::bb_log_kernel_value(yi, mi, pi, sigma) +
               w * detail::bb_log_kernel_value(yi, mi, pi, inflated);
    }
  }
  if (gradient) {
    const Eigen::VectorXd gb = x_.transpose() * g_pi;
    const Eigen::VectorXd ga = u_.transpose() * g_sigma;
    if (with_lambda) {
      const Eigen::VectorXd gl = z_.transpose() * g_eta;
      *gradient = concat({&gb, &ga, &gl});
    } else {
      *gradient = concat({&gb, &ga});
    }
  }
  return total;
}

double Model::q2(const Eigen::VectorXd& weights, const Coefficients& c) const {
  check(c);
  return q2_pass(weights, c, true, nullptr);
}

Q2Update Model::update_q2(const Eigen::VectorXd& weights, const Coefficients& current,
                          const FitControl& control) const {
  if (family() != Family::contaminated_beta_binomial) {
    throw std::logic_error("the Q2 update applies to the contaminated beta-binomial family");
  }
  check(current);
  if (weights.size() != static_cast<Eigen::Index>(rows())) {
    throw std::invalid_argument("weights length does not match the dataset");
  }
  Q2Update update;
  update.lambda_frozen = weights.sum() < kLambdaFreezeMass;
  const bool with_lambda = !update.lambda_frozen;

  const Eigen::Index nb = x_.cols();
  const Eigen::Index na = u_.cols();
  auto unpack = [&](const Eigen::VectorXd& theta) {
    Coefficients c = current;
    c.beta = theta.segment(0, nb);
    c.alpha = theta.segment(nb, na);
    if (with_lambda) c.lambda = theta.segment(nb + na, z_.cols());
    return c;
  };
  const Eigen::VectorXd start = with_lambda ? concat({&current.beta, &current.alpha, &current.lambda})
                                            : concat({&current.beta, &current.alpha});

  optim::Objective objective;
  objective.value = [&](const Eigen::VectorXd& theta) {
    return q2_pass(weights, unpack(theta), with_lambda, nullptr);
  };
  objective.value_and_gradient = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& g) {
    return q2_pass(weights, unpack(theta), with_lambda, &g);
  };

  optim::Options options;
  options.max_iterations = control.inner_optimizer == optim::Method::simplex
                               ? control.inner_max_iterations * static_cast<int>(start.size() + 1)
                               : control.inner_max_iterations;
  options.tolerance = control.inner_tolerance;
  const auto result = optim::maximize(control.inner_optimizer, objective, start, options);

  update.q2_before = q2_pass(weights, current, true, nullptr);
  Coefficients chosen = current;
  if (std::isfinite(result.value) && result.x.allFinite()) chosen = unpack(result.x);
  update.q2_after = q2_pass(weights, chosen, true, nullptr);
  if (!(update.q2_after >= update.q2_before - 1e-12)) {
    chosen = current;
    update.q2_after = update.q2_before;
    update.optimizer_failed = true;
  }
  update.beta = chosen.beta;
  update.alpha = chosen.alpha;
  update.lambda = chosen.lambda;
  return update;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

Model with_family(const Dataset& data, const ModelSpec& spec, Family family) {
  ModelSpec copy = spec;
  copy.family = family;
  return Model(data, copy);
}

Coefficients jitter(const Coefficients& c, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, kRestartJitter);
  Coefficients out = c;
  for (Eigen::VectorXd* block : {&out.beta, &out.alpha, &out.gamma, &out.lambda}) {
    for (Eigen::Index j = 0; j < block->size(); ++j) (*block)[j] += noise(rng);
  }
  return out;
}

void add_boundary_diagnostics(const Model& model, FitResult& result) {
  const Coefficients& c = result.coefficients;
  auto check_block = [&](const Eigen::MatrixXd& design, const Eigen::VectorXd& coef,
                         const char* name) {
    if (coef.size() == 0) return;
    const double largest = (design * coef).cwiseAbs().maxCoeff();
    if (largest > kUnreliablePredictor) {
      std::ostringstream msg;
      msg << "linear predictor for " << name << " reaches |" << largest
          << "|: likelihood is nearly flat there";
      result.diagnostics.push_back(msg.str());
    }
  };
  check_block(model.pi_design(), c.beta, "pi");
  check_block(model.sigma_design(), c.alpha, "sigma");
  check_block(model.delta_design(), c.gamma, "delta");
  check_block(model.eta_design(), c.lambda, "eta");
}

FitResult fit_direct_once(const Model& model, const Coefficients& start, const FitControl& control) {
  const auto objective = model.log_likelihood_objective();
  const Eigen::VectorXd theta0 = model.flatten(start);
  optim::Options options;
  options.max_iterations = control.inner_optimizer == optim::Method::simplex
                               ? control.max_iterations * static_cast<int>(theta0.size() + 1)
                               : control.max_iterations;
  options.tolerance = control.inner_tolerance;
  const double start_ll = model.log_likelihood(start);
  const auto result = optim::maximize(control.inner_optimizer, objective, theta0, options);

  FitResult fit;
  fit.family = model.family();
  fit.coefficients = model.unflatten(result.x);
  fit.log_likelihood = result.value;
  fit.iterations = result.iterations;
  fit.converged = result.converged;
  fit.trace = {start_ll, result.value};
  fit.posterior_weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.rows()));
  return fit;
}

FitResult fit_direct(const Model& model, const Coefficients& start, const FitControl& control) {
  FitResult best = fit_direct_once(model, start, control);
  std::mt19937_64 rng(control.seed);
  for (int r = 0; r < control.restarts; ++r) {
    FitResult candidate = fit_direct_once(model, jitter(start, rng), control);
    if (candidate.log_likelihood > best.log_likelihood) best = std::move(candidate);
  }
  return best;
}

Coefficients binomial_start(const Model& model, const std::vector<std::int64_t>& y,
                            const std::vector<std::int64_t>& m) {
  double successes = 0.0, trials = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    successes += static_cast<double>(y[i]);
    trials += static_cast<double>(m[i]);
  }
  Coefficients c = model.zero_coefficients();
  c.beta[0] = logit(std::clamp(successes / trials, 1e-6, 1.0 - 1e-6));
  return c;
}

// Method-of-moments dispersion from a binomial fit: E[(y − mπ)²] = mπ(1−π)(1 + mσ)/(1 + σ).
double moment_sigma(const Model& binomial_model, const Coefficients& binomial_fit,
                    const std::vector<std::int64_t>& y, const std::vector<std::int64_t>& m) {
  const auto params = binomial_model.row_parameters(binomial_fit);
  double ratio_sum = 0.0, m_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double mi = static_cast<double>(m[i]);
    const double pi = params.pi[static_cast<Eigen::Index>(i)];
    const double r = static_cast<double>(y[i]) - mi * pi;
    ratio_sum += r * r / (mi * pi * (1.0 - pi));
    m_sum += mi;
  }
  const double n = static_cast<double>(y.size());
  const double phi = ratio_sum / n;
  const double mean_m = m_sum / n;
  double rho = mean_m > 1.0 ? (phi - 1.0) / (mean_m - 1.0) : 0.1;
  rho = std::clamp(rho, 0.01, 0.9);
  return rho / (1.0 - rho);
}

struct Baselines {
  FitResult binomial;
  FitResult beta_binomial;
};

Baselines fit_baselines(const Dataset& data, const ModelSpec& spec, const FitControl& control,
                        const std::optional<Coefficients>& bb_init = std::nullopt) {
  Baselines out;
  const Model b_model = with_family(data, spec, Family::binomial);
  out.binomial = fit_direct(b_model, binomial_start(b_model, data.y, data.m), control);

  const Model bb_model = with_family(data, spec, Family::beta_binomial);
  Coefficients start = bb_model.zero_coefficients();
  if (bb_init) {
    start = *bb_init;
  } else {
    start.beta = out.binomial.coefficients.beta;
    start.alpha[0] = std::log(moment_sigma(b_model, out.binomial.coefficients, data.y, data.m));
  }
  out.beta_binomial = fit_direct(bb_model, start, control);

  // The binomial is the σ → 0 limit; at the admissible floor the BB likelihood
  // equals the binomial one to ~1e-10, so the BB fit can never fall below it.
  Coefficients floor = bb_model.zero_coefficients();
  floor.beta = out.binomial.coefficients.beta;
  floor.alpha[0] = std::log(admissible::kDispersionMin);
  const double floor_ll = bb_model.log_likelihood(floor);
  if (floor_ll > out.beta_binomial.log_likelihood) {
    out.beta_binomial.coefficients = floor;
    out.beta_binomial.log_likelihood = floor_ll;
    out.beta_binomial.trace.push_back(floor_ll);
    out.beta_binomial.converged = out.binomial.converged;
    out.beta_binomial.diagnostics.push_back("sigma at the admissible floor (binomial limit)");
  }
  return out;
}

Coefficients cbb_start_from(const Model& model, const FitResult& bb, double eta0) {
  Coefficients c = model.zero_coefficients();
  c.beta = bb.coefficients.beta;
  c.alpha = bb.coefficients.alpha;
  c.gamma[0] = logit(kInitialDelta);
  c.lambda[0] = std::log(eta0 - 1.0);
  return c;
}

FitResult run_em(const Model& model, const Coefficients& start, const FitControl& control) {
  FitResult result;
  result.family = model.family();
  Coefficients current = start;
  Eigen::VectorXd weights;
  double ll = model.log_likelihood_and_weights(current, weights);
  if (!std::isfinite(ll)) {
    throw std::runtime_error("EM start has a non-finite log-likelihood");
  }
  result.trace.push_back(ll);

  for (int iter = 0; iter < control.max_iterations; ++iter) {
    result.iterations = iter + 1;
    const GammaUpdate gamma = model.update_gamma(weights, current.gamma);
    if (gamma.clamped) {
      result.diagnostics.push_back("iteration " + std::to_string(iter + 1) +
                                   ": degenerate posterior weights, delta clamped");
    }
    Coefficients next = current;
    if (model.q1(weights, gamma.gamma) >= model.q1(weights, current.gamma)) next.gamma = gamma.gamma;
    const Q2Update q2 = model.update_q2(weights, current, control);
    next.beta = q2.beta;
    next.alpha = q2.alpha;
    next.lambda = q2.lambda;

    Eigen::VectorXd next_weights;
    const double next_ll = model.log_likelihood_and_weights(next, next_weights);
    if (!std::isfinite(next_ll) || next_ll < ll - 1e-8) {
      result.diagnostics.push_back("iteration " + std::to_string(iter + 1) +
                                   ": log-likelihood decreased, stopping");
      break;
    }
    result.trace.push_back(next_ll);
    const double gain = next_ll - ll;
    current = std::move(next);
    weights = std::move(next_weights);
    ll = next_ll;
    if (gain < control.epsilon) {
      result.converged = true;
      break;
    }
  }
  result.coefficients = current;
  result.log_likelihood = ll;
  result.posterior_weights = weights;
  return result;
}

FitResult fit_cbb(const Model& model, const Coefficients& start, const FitResult* bb,
                  const FitControl& control) {
  FitResult result = run_em(model, start, control);
  std::mt19937_64 rng(control.seed);
  for (int r = 0; r < control.restarts; ++r) {
    FitResult candidate = run_em(model, jitter(start, rng), control);
    if (candidate.log_likelihood > result.log_likelihood) result = std::move(candidate);
  }
  // cBB nests BB as η → 1; restart from that limit if EM settled below the BB fit.
  if (bb && result.log_likelihood < bb->log_likelihood) {
    FitResult candidate = run_em(model, cbb_start_from(model, *bb, 1.0 + 1e-6), control);
    if (candidate.log_likelihood > result.log_likelihood) {
      candidate.diagnostics.push_back("EM restarted from the beta-binomial limit (eta -> 1)");
      result = std::move(candidate);
    }
  }
  return result;
}

}  // namespace

RowParameters linear_predictors(const Dataset& data, const ModelSpec& spec,
                                const Coefficients& coeffs) {
  return Model(data, spec).row_parameters(coeffs);
}

double observed_log_likelihood(const Dataset& data, const ModelSpec& spec,
                               const Coefficients& coeffs) {
  const double ll = Model(data, spec).log_likelihood(coeffs);
  if (!std::isfinite(ll)) throw std::runtime_error("log-likelihood evaluation failed (non-finite)");
  return ll;
}

Eigen::VectorXd e_step(const Dataset& data, const ModelSpec& spec, const Coefficients& coeffs) {
  if (spec.family != Family::contaminated_beta_binomial) {
    throw std::invalid_argument("e_step requires the contaminated beta-binomial family");
  }
  return Model(data, spec).posterior_weights(coeffs);
}

GammaUpdate m_step_gamma(const Eigen::VectorXd& weights, const Dataset& data,
                         const ModelSpec& spec, const std::optional<Eigen::VectorXd>& warm_start) {
  ModelSpec copy = spec;
  copy.family = Family::contaminated_beta_binomial;
  const Model model(data, copy);
  return model.update_gamma(weights, warm_start.value_or(Eigen::VectorXd()));
}

Q2Update m_step_q2(const Eigen::VectorXd& weights, const Dataset& data, const ModelSpec& spec,
                   const Coefficients& current, const FitControl& control) {
  ModelSpec copy = spec;
  copy.family = Family::contaminated_beta_binomial;
  return Model(data, copy).update_q2(weights, current, control);
}

Coefficients initialize(const Dataset& data, const ModelSpec& spec, const FitControl& control) {
  control.validate();
  const Model model = with_family(data, spec, Family::contaminated_beta_binomial);
  const Baselines baselines = fit_baselines(data, spec, control);
  return cbb_start_from(model, baselines.beta_binomial, kInitialEta);
}

namespace {

// Rows sorted by (m, y, covariates) so fits do not depend on input order.
std::vector<std::size_t> canonical_order(const Dataset& data) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const Eigen::MatrixXd& x = data.covariates;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (data.m[a] != data.m[b]) return data.m[a] < data.m[b];
    if (data.y[a] != data.y[b]) return data.y[a] < data.y[b];
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double xa = x(static_cast<Eigen::Index>(a), j);
      const double xb = x(static_cast<Eigen::Index>(b), j);
      if (xa != xb) return xa < xb;
    }
    return false;
  });
  return order;
}

Dataset reordered(const Dataset& data, const std::vector<std::size_t>& order) {
  Dataset out = data;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.y[i] = data.y[order[i]];
    out.m[i] = data.m[order[i]];
    out.covariates.row(static_cast<Eigen::Index>(i)) =
        data.covariates.row(static_cast<Eigen::Index>(order[i]));
  }
  return out;
}

void restore_order(FitResult& result, const std::vector<std::size_t>& order) {
  if (result.posterior_weights.size() != static_cast<Eigen::Index>(order.size())) return;
  Eigen::VectorXd w(result.posterior_weights.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    w[static_cast<Eigen::Index>(order[i])] = result.posterior_weights[static_cast<Eigen::Index>(i)];
  }
  result.posterior_weights = std::move(w);
}

FitResult fit_canonical(const Dataset& data, const ModelSpec& spec,
                        const std::optional<Coefficients>& init, const FitControl& control) {
  const Model model(data, spec);
  if (init) model.check(*init);

  FitResult result;
  switch (spec.family) {
    case Family::binomial: {
      const Coefficients start = init ? *init : binomial_start(model, data.y, data.m);
      result = fit_direct(model, start, control);
      break;
    }
    case Family::beta_binomial: {
      result = fit_baselines(data, spec, control, init).beta_binomial;
      break;
    }
    case Family::contaminated_beta_binomial: {
      if (init) {
        result = fit_cbb(model, *init, nullptr, control);
      } else {
        const Baselines baselines = fit_baselines(data, spec, control);
        result = fit_cbb(model, cbb_start_from(model, baselines.beta_binomial, kInitialEta),
                         &baselines.beta_binomial, control);
      }
      break;
    }
  }
  add_boundary_diagnostics(model, result);
  return result;
}

NestedFits fit_nested_canonical(const Dataset& data, const ModelSpec& spec,
                                const FitControl& control) {
  const Model model = with_family(data, spec, Family::contaminated_beta_binomial);
  const Baselines baselines = fit_baselines(data, spec, control);
  NestedFits out;
  out.binomial = baselines.binomial;
  out.beta_binomial = baselines.beta_binomial;
  out.contaminated = fit_cbb(model, cbb_start_from(model, baselines.beta_binomial, kInitialEta),
                             &baselines.beta_binomial, control);
  add_boundary_diagnostics(with_family(data, spec, Family::binomial), out.binomial);
  add_boundary_diagnostics(with_family(data, spec, Family::beta_binomial), out.beta_binomial);
  add_boundary_diagnostics(model, out.contaminated);
  return out;
}

}  // namespace

FitResult fit(const Dataset& data, const ModelSpec& spec, const std::optional<Coefficients>& init,
              const FitControl& control) {
  control.validate();
  data.validate();
  const auto order = canonical_order(data);
  FitResult result = fit_canonical(reordered(data, order), spec, init, control);
  restore_order(result, order);
  return result;
}

NestedFits fit_nested(const Dataset& data, const ModelSpec& spec, const FitControl& control) {
  control.validate();
  data.validate();
  const auto order = canonical_order(data);
  NestedFits out = fit_nested_canonical(reordered(data, order), spec, control);
  restore_order(out.binomial, order);
  restore_order(out.beta_binomial, order);
  restore_order(out.contaminated, order);
  return out;
}

}  // namespace cbbreg
