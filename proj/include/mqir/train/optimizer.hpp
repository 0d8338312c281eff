#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mqir/numerics/array.hpp"

namespace mqir::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators keyed like the parameters they follow.
template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::size_t step = 0;
  std::map<std::string, std::vector<T>> first;
  std::map<std::string, std::vector<T>> second;
};

/// One bias-corrected Adam update from each parameter's `grad`. A parameter
/// without a gradient is treated as having a zero gradient. Throws
/// num::ShapeError when a gradient or accumulator does not match its
/// parameter.
template <typename T>
void adam_step(std::map<std::string, num::Array<T>>& params, AdamState<T>& state, double lr);

/// L2 norm over every gradient entry.
template <typename T>
double global_grad_norm(const std::map<std::string, num::Array<T>>& params);

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::map<std::string, num::Array<T>>& params, double max_norm);

}  // namespace mqir::train
