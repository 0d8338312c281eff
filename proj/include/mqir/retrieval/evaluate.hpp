#pragma once

#include <vector>

#include "mqir/data/batching.hpp"
#include "mqir/data/features.hpp"
#include "mqir/data/narrative.hpp"
#include "mqir/data/vocabulary.hpp"
#include "mqir/model/matcher.hpp"
#include "mqir/retrieval/index.hpp"
#include "mqir/retrieval/metrics.hpp"

namespace mqir::retrieval {

/// Query embeddings for prepared examples, dropout off, row-major [n, E].
std::vector<float> encode_queries(const model::Matcher<float>& m,
                                  const std::vector<data::QueryExample>& queries);

struct EvalOptions {
  /// With traces off, every box is the whole canvas.
  bool use_traces = true;
  geometry::Padding padding{};
  /// The eval images are cut into this many contiguous folds, each with its
  /// own index; the reported metrics are the mean over folds.
  std::size_t folds = 1;
  /// 0 picks the hardware concurrency.
  std::size_t threads = 0;
};

struct Evaluation {
  Metrics metrics;
  std::vector<Metrics> folds;
  std::vector<RankingResult> results;  // record order
};

/// Ranks every record's image among the images of the evaluated records.
Evaluation evaluate(const model::Matcher<float>& m, const std::vector<data::NarrativeRecord>& records,
                    const data::FeatureSet& features, const data::Vocabulary& vocab,
                    const EvalOptions& options = {});

}  // namespace mqir::retrieval
