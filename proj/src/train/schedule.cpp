#include "mqir/train/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mqir::train {

double lr_at_epoch(double epoch, const Schedule& s) {
  if (epoch < 0.0) {
    throw std::invalid_argument("lr_at_epoch: negative epoch");
  }
  const double warm = s.warmup_epochs > 0.0 ? std::min(1.0, epoch / s.warmup_epochs) : 1.0;
  const double decays = std::floor(std::max(0.0, epoch - s.warmup_epochs) / s.decay_every);
  return s.base_lr * warm * std::pow(s.decay_factor, decays);
}

double lr_at(std::size_t step, const Schedule& s) {
  if (s.steps_per_epoch == 0) {
    throw std::invalid_argument("lr_at: steps_per_epoch must be positive");
  }
  return lr_at_epoch(static_cast<double>(step) / static_cast<double>(s.steps_per_epoch), s);
}

}  // namespace mqir::train
