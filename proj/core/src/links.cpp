#include "cbbreg/links.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cbbreg/distributions.hpp"

namespace cbbreg {
namespace {

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

struct Box {
  double lo;
  double hi;
};

Box box_for(LinkKind kind) {
  switch (kind) {
    case LinkKind::logit:
      return {admissible::kProbabilityMin, admissible::kProbabilityMax};
    case LinkKind::log:
      return {admissible::kDispersionMin, admissible::kDispersionMax};
    case LinkKind::shifted_log:
      return {admissible::kInflationMin, admissible::kInflationMax};
  }
  throw std::logic_error("unknown link");
}

double unclamped_inverse(LinkKind kind, double t) {
  switch (kind) {
    case LinkKind::logit:
      return logistic(t);
    case LinkKind::log:
      return std::exp(t);
    case LinkKind::shifted_log:
      return std::exp(t) + 1.0;
  }
  throw std::logic_error("unknown link");
}

}  // namespace

std::string_view to_string(LinkKind kind) {
  switch (kind) {
    case LinkKind::logit:
      return "logit";
    case LinkKind::log:
      return "log";
    case LinkKind::shifted_log:
      return "shifted_log";
  }
  return "unknown";
}

double apply_inverse_link(LinkKind kind, double linear_predictor) {
  const Box box = box_for(kind);
  return std::clamp(unclamped_inverse(kind, linear_predictor), box.lo, box.hi);
}

double apply_link(LinkKind kind, double parameter_value) {
  switch (kind) {
    case LinkKind::logit:
      if (!(parameter_value > 0.0 && parameter_value < 1.0)) {
        throw std::domain_error("logit link requires a value in (0,1), got " +
                                std::to_string(parameter_value));
      }
      return std::log(parameter_value) - std::log1p(-parameter_value);
    case LinkKind::log:
      if (!(parameter_value > 0.0) || std::isinf(parameter_value)) {
        throw std::domain_error("log link requires a finite value > 0, got " +
                                std::to_string(parameter_value));
      }
      return std::log(parameter_value);
    case LinkKind::shifted_log:
      if (!(parameter_value > 1.0) || std::isinf(parameter_value)) {
        throw std::domain_error("shifted log link requires a finite value > 1, got " +
                                std::to_string(parameter_value));
      }
      return std::log(parameter_value - 1.0);
  }
  throw std::logic_error("unknown link");
}

double inverse_link_derivative(LinkKind kind, double linear_predictor) {
  const Box box = box_for(kind);
  const double value = unclamped_inverse(kind, linear_predictor);
  if (value <= box.lo || value >= box.hi) return 0.0;
  switch (kind) {
    case LinkKind::logit:
      return value * (1.0 - value);
    case LinkKind::log:
      return value;
    case LinkKind::shifted_log:
      return value - 1.0;
  }
  throw std::logic_error("unknown link");
}

}  // namespace cbbreg
