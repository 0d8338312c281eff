#pragma once

#include <span>
#include <string>
#include <vector>

#include "mqir/retrieval/index.hpp"

namespace mqir::retrieval {

/// Percentage of results whose target is within the top k.
double recall_at_k(std::span<const RankingResult> results, std::size_t k);

/// Mean reciprocal rank of the target; each query has a single relevant image.
double mean_average_precision(std::span<const RankingResult> results);

struct Metrics {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double map = 0.0;
  std::size_t queries = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

Metrics summarize(std::span<const RankingResult> results);

/// Element-wise mean; `queries` is summed.
Metrics mean_of(std::span<const Metrics> parts);

/// Human-readable table followed by one `metric=value` line per metric.
std::string format_report(const Metrics& m, const std::string& title = "retrieval");

/// Only the `metric=value` lines, each name prefixed by `prefix`.
std::string format_metric_lines(const Metrics& m, const std::string& prefix = "");

/// Per-split metrics with their mean and sample standard deviation.
struct SplitSummary {
  std::vector<Metrics> splits;
  Metrics mean;
  Metrics stddev;
};

SplitSummary summarize_splits(std::vector<Metrics> splits);
std::string format_split_summary(const SplitSummary& s);

}  // namespace mqir::retrieval
