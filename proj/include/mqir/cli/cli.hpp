#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "mqir/cli/run_config.hpp"
#include "mqir/data/features.hpp"
#include "mqir/model/config.hpp"
#include "mqir/retrieval/evaluate.hpp"
#include "mqir/service/server.hpp"
#include "mqir/train/trainer.hpp"

namespace mqir::cli {

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// getenv as an EnvLookup.
std::optional<std::string> process_environment(const std::string& name);

/// Entry point of the `mqir` tool. Returns the exit status: 0 on success,
/// 1 for a runtime failure, 2 for a usage or configuration error.
int run_cli(int argc, const char* const argv[], std::ostream& out, std::ostream& err,
            const EnvLookup& env = process_environment);

/// Model shape from the config, with feature widths taken from the feature
/// file header and the vocabulary size from the loaded vocabulary.
model::ModelConfig model_config(const RunConfig& c, const data::FeatureSet& features, std::size_t vocab_size);
train::TrainConfig train_config(const RunConfig& c, const std::filesystem::path& output_dir);
retrieval::EvalOptions eval_options(const RunConfig& c);

/// Loads checkpoint, vocabulary, index and scenes exactly as `serve` does.
service::ServiceState load_service_state(const RunConfig& c);

}  // namespace mqir::cli
