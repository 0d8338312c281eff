#include "mqir/train/optimizer.hpp"

#include <cmath>

namespace mqir::train {

template <typename T>
void adam_step(std::map<std::string, num::Array<T>>& params, AdamState<T>& state, double lr) {
  for (auto& [name, p] : params) {
    if (p.has_grad() && p.grad.size() != p.values.size()) {
      throw num::ShapeError("adam: gradient of '" + name + "' has " + std::to_string(p.grad.size()) +
                            " entries, parameter has " + std::to_string(p.values.size()));
    }
    for (auto* moments : {&state.first, &state.second}) {
      auto it = moments->find(name);
      if (it != moments->end() && it->second.size() != p.values.size()) {
        throw num::ShapeError("adam: accumulator of '" + name + "' does not match the parameter");
      }
    }
  }
  const AdamHyper& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (auto& [name, p] : params) {
    auto& m = state.first[name];
    auto& v = state.second[name];
    m.resize(p.values.size(), T(0));
    v.resize(p.values.size(), T(0));
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double g = p.has_grad() ? static_cast<double>(p.grad[i]) : 0.0;
      const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
      const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + h.epsilon);
      p.values[i] = static_cast<T>(static_cast<double>(p.values[i]) - update);
    }
  }
}

template <typename T>
double global_grad_norm(const std::map<std::string, num::Array<T>>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (T g : p.grad) {
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(std::map<std::string, num::Array<T>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, p] : params) {
      for (T& g : p.grad) {
        g = static_cast<T>(static_cast<double>(g) * s);
      }
    }
  }
  return norm;
}

#define MQIR_INSTANTIATE_OPTIMIZER(T)                                                        \
  template void adam_step(std::map<std::string, num::Array<T>>&, AdamState<T>&, double);    \
  template double global_grad_norm(const std::map<std::string, num::Array<T>>&);            \
  template double clip_grad_norm(std::map<std::string, num::Array<T>>&, double);

MQIR_INSTANTIATE_OPTIMIZER(float)
MQIR_INSTANTIATE_OPTIMIZER(double)

}  // namespace mqir::train
