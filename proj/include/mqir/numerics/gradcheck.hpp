#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mqir/numerics/graph.hpp"

namespace mqir::num {

/// Builds a fresh scalar-valued graph from the current parameter values.
using ScalarFunction = std::function<Tensor<double>(Graph<double>&)>;

struct NamedParameter {
  std::string name;
  Array<double>* array;
};

struct ParameterCheck {
  std::string name;
  std::size_t entries = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double max_relative_error = 0.0;
  bool passed = true;
};

struct GradientReport {
  std::vector<ParameterCheck> parameters;
  double max_relative_error = 0.0;
  bool passed = true;

  const ParameterCheck* find(const std::string& name) const;
};

/// Errors are |analytic - numeric| / max(|analytic|, |numeric|, floor); the
/// floor keeps gradients that are zero up to rounding from dominating.
inline constexpr double kRelativeErrorFloor = 1e-6;

double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor);

/// Compares the reverse-mode gradient of `f` with central differences for
/// every entry of every parameter. `f` must be deterministic.
GradientReport finite_difference_check(const ScalarFunction& f,
                                       const std::vector<NamedParameter>& parameters,
                                       double epsilon, double tolerance);

}  // namespace mqir::num
