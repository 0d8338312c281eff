#include "mqir/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mqir::num {

const ParameterCheck* GradientReport::find(const std::string& name) const {
  for (const ParameterCheck& p : parameters) {
    if (p.name == name) {
      return &p;
    }
  }
  return nullptr;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

double evaluate_scalar(const ScalarFunction& f) {
  Graph<double> g(Mode::inference);
  Tensor<double> out = f(g);
  if (out.size() != 1) {
    throw ShapeError("finite_difference_check: output shape " + shape_string(out.shape()) +
                     " is not scalar");
  }
  return out.values()[0];
}

}  // namespace

GradientReport finite_difference_check(const ScalarFunction& f,
                                       const std::vector<NamedParameter>& parameters,
                                       double epsilon, double tolerance) {
  for (const NamedParameter& p : parameters) {
    p.array->requires_grad = true;
    p.array->zero_grad();
  }
  {
    Graph<double> g(Mode::inference);
    Tensor<double> out = f(g);
    if (out.size() != 1) {
      throw ShapeError("finite_difference_check: output shape " + shape_string(out.shape()) +
                       " is not scalar");
    }
    g.backpropagate(out);
  }

  GradientReport report;
  for (const NamedParameter& p : parameters) {
    Array<double>& a = *p.array;
    ParameterCheck check;
    check.name = p.name;
    check.entries = a.values.size();
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      const double original = a.values[i];
      a.values[i] = original + epsilon;
      const double up = evaluate_scalar(f);
      a.values[i] = original - epsilon;
      const double down = evaluate_scalar(f);
      a.values[i] = original;
      const double numeric = (up - down) / (2.0 * epsilon);
      double err = relative_error(a.grad[i], numeric);
      if (std::isnan(err)) {
        err = std::numeric_limits<double>::infinity();
      }
      if (err > check.max_relative_error || i == 0) {
        check.max_relative_error = err;
        check.worst_index = i;
        check.worst_analytic = a.grad[i];
        check.worst_numeric = numeric;
      }
    }
    check.passed = check.max_relative_error < tolerance;
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    report.passed = report.passed && check.passed;
    report.parameters.push_back(std::move(check));
  }
  return report;
}

}  // namespace mqir::num
