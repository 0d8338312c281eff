#include "mqir/retrieval/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace mqir::retrieval {

namespace {

void require_targets(std::span<const RankingResult> results, const char* what) {
  if (results.empty()) {
    throw std::invalid_argument(std::string(what) + ": no results");
  }
  for (const auto& r : results) {
    if (r.rank_of_target == 0) {
      throw std::invalid_argument(std::string(what) + ": query '" + r.query_id + "' has no target");
    }
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

double recall_at_k(std::span<const RankingResult> results, std::size_t k) {
  require_targets(results, "recall_at_k");
  std::size_t hits = 0;
  for (const auto& r : results) {
    if (r.rank_of_target <= k) {
      ++hits;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

double mean_average_precision(std::span<const RankingResult> results) {
  require_targets(results, "mean_average_precision");
  double sum = 0.0;
  for (const auto& r : results) {
    sum += 1.0 / static_cast<double>(r.rank_of_target);
  }
  return sum / static_cast<double>(results.size());
}

Metrics summarize(std::span<const RankingResult> results) {
  return {recall_at_k(results, 1), recall_at_k(results, 5), recall_at_k(results, 10),
          mean_average_precision(results), results.size()};
}

Metrics mean_of(std::span<const Metrics> parts) {
  if (parts.empty()) {
    throw std::invalid_argument("mean_of: no metrics");
  }
  Metrics m;
  for (const auto& p : parts) {
    m.r1 += p.r1;
    m.r5 += p.r5;
    m.r10 += p.r10;
    m.map += p.map;
    m.queries += p.queries;
  }
  const double n = static_cast<double>(parts.size());
  m.r1 /= n;
  m.r5 /= n;
  m.r10 /= n;
  m.map /= n;
  return m;
}

std::string format_metric_lines(const Metrics& m, const std::string& prefix) {
  std::ostringstream out;
  out << prefix << "R@1=" << fixed(m.r1, 4) << "\n";
  out << prefix << "R@5=" << fixed(m.r5, 4) << "\n";
  out << prefix << "R@10=" << fixed(m.r10, 4) << "\n";
  out << prefix << "mAP=" << fixed(m.map, 6) << "\n";
  out << prefix << "queries=" << m.queries << "\n";
  return out.str();
}

std::string format_report(const Metrics& m, const std::string& title) {
  std::ostringstream out;
  char line[128];
  out << title << "\n";
  std::snprintf(line, sizeof line, "  %-8s %8s %8s %8s %8s\n", "queries", "R@1", "R@5", "R@10", "mAP");
  out << line;
  std::snprintf(line, sizeof line, "  %-8zu %8.2f %8.2f %8.2f %8.4f\n", m.queries, m.r1, m.r5, m.r10,
                m.map);
  out << line << "\n" << format_metric_lines(m);
  return out.str();
}

SplitSummary summarize_splits(std::vector<Metrics> splits) {
  SplitSummary s;
  s.mean = mean_of(splits);
  if (splits.size() > 1) {
    auto var = [&](auto field) {
      double acc = 0.0;
      for (const auto& m : splits) {
        const double d = field(m) - field(s.mean);
        acc += d * d;
      }
      return std::sqrt(acc / static_cast<double>(splits.size() - 1));
    };
    s.stddev.r1 = var([](const Metrics& m) { return m.r1; });
    s.stddev.r5 = var([](const Metrics& m) { return m.r5; });
    s.stddev.r10 = var([](const Metrics& m) { return m.r10; });
    s.stddev.map = var([](const Metrics& m) { return m.map; });
  }
  s.stddev.queries = 0;
  s.splits = std::move(splits);
  return s;
}

std::string format_split_summary(const SplitSummary& s) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "  %-8s %8s %8s %8s %8s\n", "split", "R@1", "R@5", "R@10", "mAP");
  out << "re-split evaluation\n" << line;
  for (std::size_t i = 0; i < s.splits.size(); ++i) {
    const auto& m = s.splits[i];
    std::snprintf(line, sizeof line, "  %-8zu %8.2f %8.2f %8.2f %8.4f\n", i, m.r1, m.r5, m.r10, m.map);
    out << line;
  }
  std::snprintf(line, sizeof line, "  %-8s %8.2f %8.2f %8.2f %8.4f\n", "mean", s.mean.r1, s.mean.r5,
                s.mean.r10, s.mean.map);
  out << line;
  std::snprintf(line, sizeof line, "  %-8s %8.2f %8.2f %8.2f %8.4f\n", "std", s.stddev.r1,
                s.stddev.r5, s.stddev.r10, s.stddev.map);
  out << line << "\n";
  for (std::size_t i = 0; i < s.splits.size(); ++i) {
    out << format_metric_lines(s.splits[i], "split" + std::to_string(i) + ".");
  }
  out << format_metric_lines(s.mean, "mean.");
  const Metrics& d = s.stddev;
  out << "std.R@1=" << fixed(d.r1, 4) << "\nstd.R@5=" << fixed(d.r5, 4) << "\nstd.R@10=" << fixed(d.r10, 4)
      << "\nstd.mAP=" << fixed(d.map, 6) << "\n";
  return out.str();
}

}  // namespace mqir::retrieval
