#include "mqir/retrieval/evaluate.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace mqir::retrieval {

namespace {

constexpr std::size_t kEncodeChunk = 64;

/// Runs fn(begin, end) over contiguous slices of [0, n) on up to `threads`
/// workers. Each slice writes only its own outputs, so results do not depend
/// on the thread count.
template <typename Fn>
void parallel_slices(std::size_t n, std::size_t threads, Fn fn) {
  if (threads == 0) {
    threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = std::min(threads, std::max<std::size_t>(1, n));
  if (threads <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  const std::size_t per = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * per;
    const std::size_t end = std::min(n, begin + per);
    if (begin >= end) {
      break;
    }
    pool.emplace_back([&, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) {
          error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) {
    th.join();
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

std::vector<float> encode_query_range(const model::Matcher<float>& m,
                                      const std::vector<data::QueryExample>& queries,
                                      std::size_t begin, std::size_t end) {
  std::vector<float> out;
  for (std::size_t start = begin; start < end; start += kEncodeChunk) {
    const std::size_t n = std::min(kEncodeChunk, end - start);
    const std::size_t len = queries[start].length();
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> token_mask;
    std::vector<float> boxes;
    std::vector<std::uint8_t> box_mask;
    for (std::size_t i = start; i < start + n; ++i) {
      const auto& q = queries[i];
      if (q.length() != len) {
        throw std::invalid_argument("encode_queries: queries must share one padded length");
      }
      tokens.insert(tokens.end(), q.tokens.begin(), q.tokens.end());
      token_mask.insert(token_mask.end(), q.token_mask.begin(), q.token_mask.end());
      boxes.insert(boxes.end(), q.boxes.begin(), q.boxes.end());
      box_mask.insert(box_mask.end(), q.box_mask.begin(), q.box_mask.end());
    }
    const model::QueryInput in{n, len, tokens, token_mask, boxes, box_mask};
    const auto e = model::query_embeddings(m, in);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

}  // namespace

std::vector<float> encode_queries(const model::Matcher<float>& m,
                                  const std::vector<data::QueryExample>& queries) {
  return encode_query_range(m, queries, 0, queries.size());
}

Evaluation evaluate(const model::Matcher<float>& m, const std::vector<data::NarrativeRecord>& records,
                    const data::FeatureSet& features, const data::Vocabulary& vocab,
                    const EvalOptions& options) {
  if (records.empty()) {
    throw std::invalid_argument("evaluate: no records");
  }
  if (options.folds == 0) {
    throw std::invalid_argument("evaluate: folds must be at least 1");
  }
  const auto& c = m.config();

  // Images of the evaluated records, in feature-file order.
  std::set<std::string> wanted;
  for (const auto& r : records) {
    if (!features.find(r.image_id)) {
      throw std::invalid_argument("evaluate: no features for image '" + r.image_id + "'");
    }
    wanted.insert(r.image_id);
  }
  std::vector<std::string> image_ids;
  for (const auto& f : features.records()) {
    if (wanted.contains(f.image_id)) {
      image_ids.push_back(f.image_id);
    }
  }
  if (options.folds > image_ids.size()) {
    throw std::invalid_argument("evaluate: more folds than images");
  }

  std::vector<data::QueryExample> queries(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    queries[i] = data::prepare_query(records[i], vocab, c.max_tokens, options.padding, options.use_traces);
  }
  std::vector<float> query_vecs(records.size() * c.embedding_dim);
  parallel_slices(records.size(), options.threads, [&](std::size_t begin, std::size_t end) {
    const auto e = encode_query_range(m, queries, begin, end);
    std::copy(e.begin(), e.end(), query_vecs.begin() + static_cast<std::ptrdiff_t>(begin * c.embedding_dim));
  });

  const data::FeatureSet pool = features.subset(image_ids);
  const RetrievalIndex full = build_index(m, pool);

  Evaluation ev;
  ev.results.resize(records.size());
  const std::size_t per_fold = image_ids.size() / options.folds;
  for (std::size_t f = 0; f < options.folds; ++f) {
    // The last fold takes any remainder.
    const std::size_t lo = f * per_fold;
    const std::size_t hi = f + 1 == options.folds ? image_ids.size() : lo + per_fold;
    std::vector<std::string> ids(image_ids.begin() + static_cast<std::ptrdiff_t>(lo),
                                 image_ids.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<float> rows;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = full.row(i);
      rows.insert(rows.end(), r.begin(), r.end());
    }
    const std::set<std::string> members(ids.begin(), ids.end());
    const RetrievalIndex index(std::move(ids), std::move(rows), c.embedding_dim);
    std::vector<std::size_t> fold_queries;
    for (std::size_t q = 0; q < records.size(); ++q) {
      if (members.contains(records[q].image_id)) {
        fold_queries.push_back(q);
      }
    }
    parallel_slices(fold_queries.size(), options.threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t j = begin; j < end; ++j) {
        const std::size_t q = fold_queries[j];
        const std::span<const float> v(query_vecs.data() + q * c.embedding_dim, c.embedding_dim);
        ev.results[q] = rank(index, v, 10, "query-" + std::to_string(q), records[q].image_id);
      }
    });
    std::vector<RankingResult> fold_results;
    for (std::size_t q : fold_queries) {
      fold_results.push_back(ev.results[q]);
    }
    ev.folds.push_back(summarize(fold_results));
  }
  ev.metrics = options.folds == 1 ? ev.folds.front() : mean_of(ev.folds);
  return ev;
}

}  // namespace mqir::retrieval
