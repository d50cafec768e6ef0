#include "cbbreg/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace cbbreg::optim {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_or_neg_inf(double v) { return std::isfinite(v) ? v : -kInf; }

}  // namespace

double Objective::evaluate(const Vector& x, Vector& gradient) const {
  if (has_gradient()) return value_and_gradient(x, gradient);
  gradient = numerical_gradient(value, x);
  return value(x);
}

Vector numerical_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = std::max(1e-6, 1e-6 * std::abs(x[j]));
    probe[j] = x[j] + h;
    const double up = f(probe);
    probe[j] = x[j] - h;
    const double down = f(probe);
    probe[j] = x[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

Result maximize_bfgs(const Objective& objective, const Vector& start, const Options& options) {
  const Eigen::Index n = start.size();
  Result result;
  result.x = start;

  // Work on F = −f so the textbook minimization form applies.
  Vector grad(n);
  double f = finite_or_neg_inf(objective.evaluate(start, grad));
  result.evaluations = 1;
  result.value = f;
  if (!std::isfinite(f) || n == 0) {
    result.converged = (n == 0);
    return result;
  }
  Vector g = -grad;
  Vector x = start;
  Eigen::MatrixXd inverse_hessian = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;

  constexpr double kArmijo = 1e-4;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance * (1.0 + std::abs(f))) {
      result.converged = true;
      break;
    }

    Vector direction = -inverse_hessian * g;
    double slope = g.dot(direction);
    if (!(slope < 0.0)) {
      inverse_hessian.setIdentity();
      fresh = true;
      direction = -g;
      slope = g.dot(direction);
    }

    double step = 1.0;
    const double longest = direction.lpNorm<Eigen::Infinity>();
    if (longest * step > options.max_step) step = options.max_step / longest;

    Vector trial(n);
    Vector trial_grad(n);
    double trial_f = -kInf;
    bool accepted = false;
    for (int backtrack = 0; backtrack < 60; ++backtrack) {
      trial = x + step * direction;
      trial_f = finite_or_neg_inf(objective.evaluate(trial, trial_grad));
      ++result.evaluations;
      // Armijo on F = −f: F(trial) <= F(x) + c·step·slope.
      if (std::isfinite(trial_f) && -trial_f <= -f + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        inverse_hessian.setIdentity();
        fresh = true;
        continue;
      }
      result.converged = g.lpNorm<Eigen::Infinity>() <= 1e-3 * (1.0 + std::abs(f));
      break;
    }

    const Vector s = trial - x;
    const Vector g_new = -trial_grad;
    const Vector y = g_new - g;
    const double improvement = trial_f - f;
    x = trial;
    f = trial_f;
    g = g_new;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) {
        inverse_hessian *= sy / y.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Vector hy = inverse_hessian * y;
      inverse_hessian += rho * rho * (sy + y.dot(hy)) * (s * s.transpose()) -
                         rho * (hy * s.transpose() + s * hy.transpose());
    }

    // A stalled step only counts as convergence near stationarity.
    if (improvement <= options.tolerance * (1.0 + std::abs(f)) &&
        g.lpNorm<Eigen::Infinity>() <= 1e-4 * (1.0 + std::abs(f))) {
      result.converged = true;
      break;
    }
  }
  result.x = x;
  result.value = f;
  return result;
}

Result maximize_nelder_mead(const Objective& objective, const Vector& start,
                            const Options& options) {
  const Eigen::Index n = start.size();
  Result result;
  if (n == 0) {
    result.x = start;
    result.value = finite_or_neg_inf(objective.value(start));
    result.converged = true;
    return result;
  }
  // Minimize F = −f over the simplex.
  auto cost = [&](const Vector& x) {
    ++result.evaluations;
    const double v = objective.value(x);
    return std::isfinite(v) ? -v : kInf;
  };

  std::vector<Vector> vertices(static_cast<std::size_t>(n + 1), start);
  std::vector<double> costs(static_cast<std::size_t>(n + 1));
  for (Eigen::Index j = 0; j < n; ++j) {
    vertices[static_cast<std::size_t>(j + 1)][j] += std::max(options.initial_step,
                                                             0.05 * std::abs(start[j]));
  }
  for (std::size_t i = 0; i < vertices.size(); ++i) costs[i] = cost(vertices[i]);

  std::vector<std::size_t> order(vertices.size());
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return costs[a] < costs[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second_worst = order[order.size() - 2];

    if (std::isfinite(costs[worst]) &&
        costs[worst] - costs[best] <= options.tolerance * (std::abs(costs[best]) + options.tolerance)) {
      result.converged = true;
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (i != worst) centroid += vertices[i];
    }
    centroid /= static_cast<double>(n);

    const Vector reflected = centroid + (centroid - vertices[worst]);
    const double reflected_cost = cost(reflected);
    if (reflected_cost < costs[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - vertices[worst]);
      const double expanded_cost = cost(expanded);
      if (expanded_cost < reflected_cost) {
        vertices[worst] = expanded;
        costs[worst] = expanded_cost;
      } else {
        vertices[worst] = reflected;
        costs[worst] = reflected_cost;
      }
      continue;
    }
    if (reflected_cost < costs[second_worst]) {
      vertices[worst] = reflected;
      costs[worst] = reflected_cost;
      continue;
    }
    const bool outside = reflected_cost < costs[worst];
    const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                      : Vector(centroid + 0.5 * (vertices[worst] - centroid));
    const double contracted_cost = cost(contracted);
    if (contracted_cost < (outside ? reflected_cost : costs[worst])) {
      vertices[worst] = contracted;
      costs[worst] = contracted_cost;
      continue;
    }
    // Shrink towards the best vertex.
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (i == best) continue;
      vertices[i] = vertices[best] + 0.5 * (vertices[i] - vertices[best]);
      costs[i] = cost(vertices[i]);
    }
  }
  const auto best_it = std::min_element(costs.begin(), costs.end());
  const auto best_index = static_cast<std::size_t>(best_it - costs.begin());
  result.x = vertices[best_index];
  result.value = std::isfinite(*best_it) ? -*best_it : -kInf;
  return result;
}

Result maximize(Method method, const Objective& objective, const Vector& start,
                const Options& options) {
  return method == Method::simplex ? maximize_nelder_mead(objective, start, options)
                                   : maximize_bfgs(objective, start, options);
}

Eigen::MatrixXd numerical_hessian(const Objective& objective, const Vector& x) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd hessian(n, n);
  Vector steps(n);
  for (Eigen::Index j = 0; j < n; ++j) steps[j] = std::max(1e-5, 1e-4 * std::abs(x[j]));

  Vector probe = x;
  if (objective.has_gradient()) {
    Vector up(n), down(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      probe[j] = x[j] + steps[j];
      objective.value_and_gradient(probe, up);
      probe[j] = x[j] - steps[j];
      objective.value_and_gradient(probe, down);
      probe[j] = x[j];
      hessian.col(j) = (up - down) / (2.0 * steps[j]);
    }
    return hessian;
  }

  const double center = objective.value(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    probe[i] = x[i] + steps[i];
    const double up = objective.value(probe);
    probe[i] = x[i] - steps[i];
    const double down = objective.value(probe);
    probe[i] = x[i];
    hessian(i, i) = (up - 2.0 * center + down) / (steps[i] * steps[i]);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      auto at = [&](double si, double sj) {
        probe[i] = x[i] + si * steps[i];
        probe[j] = x[j] + sj * steps[j];
        const double v = objective.value(probe);
        probe[i] = x[i];
        probe[j] = x[j];
        return v;
      };
      const double mixed =
          (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * steps[i] * steps[j]);
      hessian(i, j) = mixed;
      hessian(j, i) = mixed;
    }
  }
  return hessian;
}

}  // namespace cbbreg::optim
