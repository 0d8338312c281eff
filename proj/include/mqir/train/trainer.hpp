#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqir/data/batching.hpp"
#include "mqir/data/features.hpp"
#include "mqir/data/narrative.hpp"
#include "mqir/data/vocabulary.hpp"
#include "mqir/model/matcher.hpp"
#include "mqir/retrieval/evaluate.hpp"
#include "mqir/train/optimizer.hpp"
#include "mqir/train/schedule.hpp"

namespace mqir::train {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  /// 0 means no limit beyond `epochs`.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  double base_lr = 1e-4;
  double warmup_epochs = 20.0;
  double decay_factor = 0.95;
  double decay_every = 25.0;
  double clip_norm = 5.0;
  AdamHyper adam{};
  geometry::Padding padding{};
  bool permute_regions = true;
  /// Keep records that share a group key in the same batch.
  bool group_batches = false;
  /// Validate every this many epochs; 0 disables validation.
  std::size_t eval_every = 1;
  /// Write an epoch checkpoint every this many epochs; 0 keeps only best.mqck.
  std::size_t checkpoint_every = 1;
  /// Checkpoints and the loss log go here; empty keeps everything in memory.
  std::filesystem::path output_dir;
};

struct TrainingData {
  const std::vector<data::NarrativeRecord>* records = nullptr;
  const data::FeatureSet* features = nullptr;
  const data::Vocabulary* vocab = nullptr;
  /// One key per record; used when TrainConfig::group_batches is set.
  std::vector<std::size_t> group_keys;
};

struct Validation {
  const std::vector<data::NarrativeRecord>* records = nullptr;
  const data::FeatureSet* features = nullptr;
  const data::Vocabulary* vocab = nullptr;
  retrieval::EvalOptions options{};
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double epoch = 0.0;    // fractional epoch after this step
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

struct EpochSummary {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  /// Share of training rows whose own image scored highest in the batch.
  double batch_accuracy = 0.0;
  std::optional<double> val_r1;
};

struct TrainResult {
  model::Matcher<float> model;  // parameters after the last step
  std::optional<model::Matcher<float>> best;  // highest validation R@1
  std::optional<double> best_val_r1;
  std::size_t best_epoch = 0;
  std::vector<StepRecord> steps;
  std::vector<EpochSummary> epochs;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minimises the in-batch contrastive loss with Adam. Deterministic given
/// the seed. When `log` is set, each step is also written there as
/// "step epoch lr loss".
TrainResult train(model::Matcher<float> model, const TrainingData& data, const TrainConfig& config,
                  const Validation* validation = nullptr, std::ostream* log = nullptr);

/// One line of the loss log.
std::string format_step(const StepRecord& s);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> initialized;
};

class TransferError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model for `target` taking every tensor the pretrained model has under
/// the same name; the rest come from the seeded initialiser. Shape conflicts
/// on a shared name throw TransferError naming the tensor.
model::Matcher<float> transfer_weights(const model::Matcher<float>& pretrained,
                                       const model::ModelConfig& target, std::uint64_t seed,
                                       TransferReport* report = nullptr);

}  // namespace mqir::train
