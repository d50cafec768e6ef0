#pragma once

#include <functional>

#include <Eigen/Dense>

namespace cbbreg::optim {

using Vector = Eigen::VectorXd;

/// A smooth objective to be maximized. `value` may return a non-finite number
/// to signal an inadmissible point. `value_and_gradient` is optional; when
/// absent, gradients are taken by central differences.
struct Objective {
  std::function<double(const Vector&)> value;
  std::function<double(const Vector&, Vector&)> value_and_gradient;

  bool has_gradient() const { return static_cast<bool>(value_and_gradient); }
  double evaluate(const Vector& x, Vector& gradient) const;
};

enum class Method { simplex, quasi_newton };

struct Options {
  int max_iterations = 200;
  // Relative change in the objective below which a step counts as converged.
  double tolerance = 1e-10;
  // Stop once max|∇f| <= gradient_tolerance * (1 + |f|).
  double gradient_tolerance = 1e-8;
  // Edge length of the initial simplex; unused by BFGS.
  double initial_step = 0.1;
  // Largest coordinate change a single BFGS line search may try.
  double max_step = 5.0;
};

struct Result {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

Result maximize_bfgs(const Objective& objective, const Vector& start, const Options& options);
Result maximize_nelder_mead(const Objective& objective, const Vector& start,
                            const Options& options);
Result maximize(Method method, const Objective& objective, const Vector& start,
                const Options& options);

/// Central-difference gradient with step max(1e-6, 1e-6 |x_j|).
Vector numerical_gradient(const std::function<double(const Vector&)>& f, const Vector& x);

/// Central finite-difference Hessian with per-coordinate step
/// h_j = max(1e-5, 1e-4 |x_j|). Differences the analytic gradient when one is
/// available, otherwise uses second differences of the value. The result is
/// returned as computed (not symmetrized).
Eigen::MatrixXd numerical_hessian(const Objective& objective, const Vector& x);

}  // namespace cbbreg::optim
