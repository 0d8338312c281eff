#include "mqir/data/batching.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "mqir/numerics/random.hpp"

namespace mqir::data {

QueryExample pad_query(const std::vector<geometry::TimedToken>& tokens,
                       const std::vector<geometry::TraceBox>& boxes, std::size_t max_tokens) {
  if (tokens.size() != boxes.size()) {
    throw std::invalid_argument("pad_query: " + std::to_string(tokens.size()) + " tokens but " +
                                std::to_string(boxes.size()) + " boxes");
  }
  if (max_tokens == 0) {
    throw std::invalid_argument("pad_query: max_tokens must be positive");
  }
  QueryExample q;
  q.tokens.assign(max_tokens, Vocabulary::kPad);
  q.token_mask.assign(max_tokens, 0);
  q.box_mask.assign(max_tokens, 0);
  q.boxes.reserve(max_tokens * 5);
  const std::size_t kept = std::min(tokens.size(), max_tokens);
  for (std::size_t i = 0; i < max_tokens; ++i) {
    const geometry::TraceBox box = i < kept ? boxes[i] : geometry::TraceBox::whole_canvas();
    const auto f = box.as_features();
    q.boxes.insert(q.boxes.end(), f.begin(), f.end());
    if (i < kept) {
      q.tokens[i] = tokens[i].token_id;
      q.token_mask[i] = 1;
      q.box_mask[i] = 1;
    }
  }
  return q;
}

QueryExample prepare_query(const NarrativeRecord& record, const Vocabulary& vocab,
                           std::size_t max_tokens, geometry::Padding padding, bool use_trace) {
  const std::vector<geometry::TimedToken> tokens = tokenize_aligned(record, vocab);
  std::vector<geometry::TraceBox> boxes;
  if (use_trace) {
    boxes = geometry::boxes_for_query(tokens, record.trace, padding);
  } else {
    boxes.assign(tokens.size(), geometry::TraceBox::whole_canvas());
  }
  return pad_query(tokens, boxes, max_tokens);
}

std::size_t Batch::valid_examples() const {
  return static_cast<std::size_t>(std::count(example_valid.begin(), example_valid.end(), 1));
}

BatchStream::BatchStream(const std::vector<NarrativeRecord>& records, const FeatureSet& features,
                         const Vocabulary& vocab, BatchOptions options)
    : options_(options),
      global_dim_(features.global_dim()),
      region_dim_(features.region_dim()),
      regions_(features.regions()) {
  if (options_.batch_size == 0) {
    throw std::invalid_argument("BatchStream: batch size must be positive");
  }
  if (records.empty()) {
    throw std::invalid_argument("BatchStream: no records");
  }
  queries_.reserve(records.size());
  features_.reserve(records.size());
  for (const NarrativeRecord& r : records) {
    const FeatureRecord* f = features.find(r.image_id);
    if (f == nullptr) {
      throw std::invalid_argument("BatchStream: missing feature record for image '" + r.image_id +
                                  "'");
    }
    queries_.push_back(
        prepare_query(r, vocab, options_.max_tokens, options_.padding, options_.use_trace));
    features_.push_back(*f);
  }
}

void BatchStream::set_group_keys(std::vector<std::size_t> keys) {
  if (!keys.empty() && keys.size() != queries_.size()) {
    throw std::invalid_argument("BatchStream: one group key per record required");
  }
  group_keys_ = std::move(keys);
}

std::size_t BatchStream::batches_per_epoch() const {
  const std::size_t b = options_.batch_size;
  return options_.drop_last ? queries_.size() / b : (queries_.size() + b - 1) / b;
}

std::vector<std::size_t> BatchStream::order_for(std::size_t epoch_index) const {
  std::vector<std::size_t> order(queries_.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  if (!options_.shuffle) {
    return order;
  }
  Rng rng(mix_seed(options_.seed, epoch_index));
  if (group_keys_.empty()) {
    rng.shuffle(order);
    return order;
  }
  std::map<std::size_t, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < order.size(); ++i) {
    by_group[group_keys_[i]].push_back(i);
  }
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [key, members] : by_group) {
    rng.shuffle(members);
    groups.push_back(std::move(members));
  }
  rng.shuffle(groups);
  order.clear();
  for (const auto& g : groups) {
    order.insert(order.end(), g.begin(), g.end());
  }
  return order;
}

Batch BatchStream::assemble(const std::vector<std::size_t>& members, std::size_t real,
                            std::size_t epoch_index) const {
  Batch b;
  b.size = members.size();
  b.max_tokens = options_.max_tokens;
  b.regions = regions_;
  b.global_dim = global_dim_;
  b.region_dim = region_dim_;
  const std::size_t n = regions_;
  const std::size_t d_r = region_dim_;
  for (std::size_t slot = 0; slot < members.size(); ++slot) {
    const std::size_t i = members[slot];
    const QueryExample& q = queries_[i];
    const FeatureRecord& f = features_[i];
    b.tokens.insert(b.tokens.end(), q.tokens.begin(), q.tokens.end());
    b.token_mask.insert(b.token_mask.end(), q.token_mask.begin(), q.token_mask.end());
    b.boxes.insert(b.boxes.end(), q.boxes.begin(), q.boxes.end());
    b.box_mask.insert(b.box_mask.end(), q.box_mask.begin(), q.box_mask.end());
    b.global.insert(b.global.end(), f.global.begin(), f.global.end());

    std::vector<std::size_t> perm(n);
    for (std::size_t r = 0; r < n; ++r) {
      perm[r] = r;
    }
    if (options_.permute_regions) {
      Rng rng(mix_seed(mix_seed(options_.seed ^ 0x5eedf00dULL, epoch_index), i));
      rng.shuffle(perm);
    }
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t src = perm[r];
      b.region_features.insert(b.region_features.end(), f.regions.begin() + static_cast<std::ptrdiff_t>(src * d_r),
                               f.regions.begin() + static_cast<std::ptrdiff_t>((src + 1) * d_r));
      b.geometry.insert(b.geometry.end(), f.geometry.begin() + static_cast<std::ptrdiff_t>(src * 5),
                        f.geometry.begin() + static_cast<std::ptrdiff_t>((src + 1) * 5));
      b.region_mask.push_back(f.valid[src]);
    }
    b.image_ids.push_back(f.image_id);
    b.example_valid.push_back(slot < real ? 1 : 0);
  }
  return b;
}

std::vector<Batch> BatchStream::epoch(std::size_t epoch_index) const {
  const std::vector<std::size_t> order = order_for(epoch_index);
  const std::size_t bsz = options_.batch_size;
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += bsz) {
    const std::size_t real = std::min(bsz, order.size() - start);
    if (real < bsz && options_.drop_last) {
      break;
    }
    std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(start + real));
    // Dummies repeat the batch's first example and are flagged invalid.
    members.resize(bsz, members.front());
    batches.push_back(assemble(members, real, epoch_index));
  }
  return batches;
}

}  // namespace mqir::data
