#pragma once

#include <cstddef>

namespace mqir::train {

/// Linear warm-up to base_lr, then a step decay counted from the end of
/// warm-up.
struct Schedule {
  double base_lr = 1e-4;
  double warmup_epochs = 20.0;
  double decay_factor = 0.95;
  double decay_every = 25.0;  // epochs
  std::size_t steps_per_epoch = 1;
};

/// lr(e) = base_lr * min(1, e / warmup) * decay_factor ^ floor(max(0, e - warmup) / decay_every)
double lr_at_epoch(double epoch, const Schedule& s);

/// The same at fractional epoch step / steps_per_epoch.
double lr_at(std::size_t step, const Schedule& s);

}  // namespace mqir::train
