#include "mqir/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "mqir/numerics/ops.hpp"
#include "mqir/numerics/random.hpp"

namespace mqir::train {

namespace {

constexpr std::uint64_t kDropoutStream = 0xd50f0a7c3e11b2a9ull;

/// Share of rows whose diagonal entry is the strict row maximum.
double diagonal_accuracy(std::span<const float> scores, std::size_t b) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const float d = scores[i * b + i];
    bool best = true;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && scores[i * b + j] >= d) {
        best = false;
        break;
      }
    }
    hits += best ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

std::string epoch_checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%04zu.mqck", epoch);
  return buf;
}

}  // namespace

std::string format_step(const StepRecord& s) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu %.6f %.9e %.9g", s.step, s.epoch, s.lr, s.loss);
  return buf;
}

TrainResult train(model::Matcher<float> model, const TrainingData& data, const TrainConfig& config,
                  const Validation* validation, std::ostream* log) {
  if (data.records == nullptr || data.features == nullptr || data.vocab == nullptr) {
    throw std::invalid_argument("train: records, features and vocabulary are required");
  }
  if (data.records->empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  if (config.batch_size < 1) {
    throw std::invalid_argument("train: batch_size must be at least 1");
  }
  const model::ModelConfig& mc = model.config();

  data::BatchOptions bo;
  bo.batch_size = config.batch_size;
  bo.max_tokens = mc.max_tokens;
  bo.padding = config.padding;
  bo.use_trace = mc.uses_traces();
  bo.shuffle = true;
  bo.permute_regions = config.permute_regions;
  bo.drop_last = true;
  bo.seed = config.seed;
  data::BatchStream stream(*data.records, *data.features, *data.vocab, bo);
  if (config.group_batches) {
    stream.set_group_keys(data.group_keys);
  }
  const std::size_t per_epoch = stream.batches_per_epoch();
  if (per_epoch == 0) {
    throw std::invalid_argument("train: fewer records (" + std::to_string(stream.size()) +
                                ") than one batch (" + std::to_string(config.batch_size) + ")");
  }

  Schedule schedule{config.base_lr, config.warmup_epochs, config.decay_factor, config.decay_every,
                    per_epoch};
  AdamState<float> adam;
  adam.hyper = config.adam;

  std::ofstream loss_file;
  std::filesystem::path ckpt_dir;
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    ckpt_dir = config.output_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    loss_file.open(config.output_dir / "loss.log", std::ios::trunc);
    if (!loss_file) {
      throw std::runtime_error("train: cannot write " + (config.output_dir / "loss.log").string());
    }
    loss_file << "# step epoch lr loss\n";
  }
  if (log != nullptr) {
    *log << "# step epoch lr loss\n";
  }

  TrainResult result;
  std::size_t step = 0;
  bool done = false;
  for (std::size_t e = 0; e < config.epochs && !done; ++e) {
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    std::size_t batches = 0;
    for (const data::Batch& batch : stream.epoch(e)) {
      if (config.max_steps != 0 && step >= config.max_steps) {
        done = true;
        break;
      }
      model.zero_grad();
      num::Graph<float> g(num::Mode::training, mix_seed(config.seed ^ kDropoutStream, step));
      auto images = model::encode_image(g, model, model::image_input(batch));
      auto queries = model::encode_query(g, model, model::query_input(batch));
      auto scores = model::score_matrix(queries, images);
      auto loss = model::contrastive_loss(scores);
      const double value = loss.values()[0];
      if (!std::isfinite(value)) {
        throw DivergenceError("training diverged at step " + std::to_string(step + 1) + " (epoch " +
                              std::to_string(e + 1) + "): loss is " + std::to_string(value) +
                              "; try a lower learning rate");
      }
      g.backpropagate(loss);
      const double norm = clip_grad_norm(model.parameters(), config.clip_norm);
      if (!std::isfinite(norm)) {
        throw DivergenceError("training diverged at step " + std::to_string(step + 1) + " (epoch " +
                              std::to_string(e + 1) + "): gradient norm is not finite");
      }
      // The first step already trains at a positive rate.
      const double lr = lr_at(step + 1, schedule);
      adam_step(model.parameters(), adam, lr);
      ++step;

      StepRecord rec{step, static_cast<double>(step) / static_cast<double>(per_epoch), lr, value, norm};
      result.steps.push_back(rec);
      const std::string line = format_step(rec);
      if (loss_file.is_open()) {
        loss_file << line << "\n";
      }
      if (log != nullptr) {
        *log << line << "\n";
      }
      loss_sum += value;
      acc_sum += diagonal_accuracy(scores.values(), batch.size);
      ++batches;
    }
    if (batches == 0) {
      break;
    }
    EpochSummary summary;
    summary.epoch = e + 1;
    summary.mean_loss = loss_sum / static_cast<double>(batches);
    summary.batch_accuracy = acc_sum / static_cast<double>(batches);

    const bool last = done || e + 1 == config.epochs ||
                      (config.max_steps != 0 && step >= config.max_steps);
    if (validation != nullptr && config.eval_every != 0 &&
        ((e + 1) % config.eval_every == 0 || last)) {
      // Evaluation reads a snapshot so it never observes a half-updated model.
      const model::Matcher<float> snapshot = model;
      const auto ev = retrieval::evaluate(snapshot, *validation->records, *validation->features,
                                          *validation->vocab, validation->options);
      summary.val_r1 = ev.metrics.r1;
      if (!result.best_val_r1 || ev.metrics.r1 > *result.best_val_r1) {
        result.best_val_r1 = ev.metrics.r1;
        result.best_epoch = e + 1;
        result.best = snapshot;
        if (!ckpt_dir.empty()) {
          model::save_checkpoint(ckpt_dir / "best.mqck", snapshot);
        }
      }
    }
    if (!ckpt_dir.empty() && config.checkpoint_every != 0 &&
        ((e + 1) % config.checkpoint_every == 0 || last)) {
      model::save_checkpoint(ckpt_dir / epoch_checkpoint_name(e + 1), model);
    }
    result.epochs.push_back(summary);
    if (last) {
      break;
    }
  }
  if (loss_file.is_open()) {
    loss_file.flush();
  }
  result.model = std::move(model);
  return result;
}

model::Matcher<float> transfer_weights(const model::Matcher<float>& pretrained,
                                       const model::ModelConfig& target, std::uint64_t seed,
                                       TransferReport* report) {
  target.validate();
  const auto layout = model::Matcher<float>::layout(target);
  std::map<std::string, num::Array<float>> params;
  TransferReport local;
  for (const auto& [name, shape] : layout) {
    if (pretrained.has(name)) {
      const auto& src = pretrained.at(name);
      if (src.shape != shape) {
        throw TransferError("cannot transfer '" + name + "': pretrained shape " +
                            num::shape_string(src.shape) + ", target shape " + num::shape_string(shape));
      }
      params.emplace(name, num::Array<float>(shape, src.values, true));
      local.copied.push_back(name);
    } else {
      params.emplace(name, model::Matcher<float>::initial_value(name, shape, seed, target.init));
      local.initialized.push_back(name);
    }
  }
  if (report != nullptr) {
    *report = std::move(local);
  }
  return model::Matcher<float>::from_parameters(target, std::move(params));
}

}  // namespace mqir::train
