#include "mqir/retrieval/index.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "mqir/data/binary_io.hpp"

namespace mqir::retrieval {

namespace {

constexpr std::size_t kEncodeChunk = 64;

}  // namespace

RetrievalIndex::RetrievalIndex(std::vector<std::string> ids, std::vector<float> embeddings,
                               std::size_t dim, Provenance provenance)
    : ids_(std::move(ids)), embeddings_(std::move(embeddings)), dim_(dim),
      provenance_(std::move(provenance)) {
  if (embeddings_.size() != ids_.size() * dim_) {
    throw IndexError("index: " + std::to_string(ids_.size()) + " ids but " +
                     std::to_string(embeddings_.size()) + " values at dimension " + std::to_string(dim_));
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!lookup_.emplace(ids_[i], i).second) {
      throw IndexError("index: duplicate image id '" + ids_[i] + "'");
    }
  }
}

std::optional<std::size_t> RetrievalIndex::index_of(const std::string& image_id) const {
  auto it = lookup_.find(image_id);
  if (it == lookup_.end()) {
    return std::nullopt;
  }
  return it->second;
}

std::vector<float> encode_images(const model::Matcher<float>& m,
                                 std::span<const data::FeatureRecord* const> records) {
  const auto& c = m.config();
  std::vector<float> out;
  out.reserve(records.size() * c.embedding_dim);
  for (std::size_t start = 0; start < records.size(); start += kEncodeChunk) {
    const std::size_t n = std::min(kEncodeChunk, records.size() - start);
    std::vector<float> global;
    std::vector<float> features;
    std::vector<float> geometry;
    std::vector<std::uint8_t> mask;
    for (std::size_t i = start; i < start + n; ++i) {
      const data::FeatureRecord& r = *records[i];
      if (r.global.size() != c.global_dim || r.regions.size() != c.regions * c.region_dim) {
        throw IndexError("features of '" + r.image_id + "' do not match the model's dimensions");
      }
      global.insert(global.end(), r.global.begin(), r.global.end());
      features.insert(features.end(), r.regions.begin(), r.regions.end());
      geometry.insert(geometry.end(), r.geometry.begin(), r.geometry.end());
      mask.insert(mask.end(), r.valid.begin(), r.valid.end());
    }
    const model::ImageInput in{n, c.regions, global, features, geometry, mask};
    const auto e = model::image_embeddings(m, in);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

RetrievalIndex build_index(const model::Matcher<float>& m, const data::FeatureSet& features,
                           Provenance provenance) {
  const auto& c = m.config();
  if (features.global_dim() != c.global_dim || features.region_dim() != c.region_dim ||
      features.regions() != c.regions) {
    throw IndexError("feature file dimensions (" + std::to_string(features.global_dim()) + ", " +
                     std::to_string(features.region_dim()) + ", " + std::to_string(features.regions()) +
                     ") do not match the model (" + std::to_string(c.global_dim) + ", " +
                     std::to_string(c.region_dim) + ", " + std::to_string(c.regions) + ")");
  }
  std::vector<const data::FeatureRecord*> records;
  std::vector<std::string> ids;
  for (const auto& r : features.records()) {
    records.push_back(&r);
    ids.push_back(r.image_id);
  }
  return RetrievalIndex(std::move(ids), encode_images(m, records), c.embedding_dim,
                        std::move(provenance));
}

RetrievalIndex build_index(const std::filesystem::path& checkpoint,
                           const std::filesystem::path& features) {
  const auto m = model::load_checkpoint(checkpoint);
  return build_index(m, data::read_features(features),
                     {model::checkpoint_id(checkpoint), data::features_id(features)});
}

void save_index(const std::filesystem::path& path, const RetrievalIndex& index) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IndexError("cannot write index " + path.string());
  }
  io::write_magic(out, "MQIX");
  io::write_u32(out, kIndexVersion);
  io::write_u32(out, static_cast<std::uint32_t>(index.dim()));
  io::write_u64(out, index.size());
  io::write_string(out, index.provenance().checkpoint);
  io::write_string(out, index.provenance().features);
  for (std::size_t i = 0; i < index.size(); ++i) {
    io::write_string(out, index.ids()[i]);
    io::write_floats(out, index.row(i));
  }
  if (!out) {
    throw IndexError("failed writing index " + path.string());
  }
}

RetrievalIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IndexError("cannot open index " + path.string());
  }
  try {
    io::expect_magic(in, "MQIX", path.string());
    const std::uint32_t version = io::read_u32(in, "index version");
    if (version != kIndexVersion) {
      throw IndexError(path.string() + ": unsupported index version " + std::to_string(version));
    }
    const std::uint32_t dim = io::read_u32(in, "index dimension");
    const std::uint64_t count = io::read_u64(in, "index size");
    Provenance p;
    p.checkpoint = io::read_string(in, "checkpoint id");
    p.features = io::read_string(in, "features id");
    std::vector<std::string> ids;
    std::vector<float> values;
    for (std::uint64_t i = 0; i < count; ++i) {
      ids.push_back(io::read_string(in, "image id"));
      std::vector<float> row(dim);
      io::read_floats(in, row, "embedding");
      values.insert(values.end(), row.begin(), row.end());
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw IndexError(path.string() + ": trailing bytes after " + std::to_string(count) + " rows");
    }
    return RetrievalIndex(std::move(ids), std::move(values), dim, std::move(p));
  } catch (const io::BinaryFormatError& e) {
    throw IndexError(path.string() + ": " + e.what());
  }
}

std::vector<double> score_all(const RetrievalIndex& index, std::span<const float> query) {
  if (query.size() != index.dim()) {
    throw IndexError("query has dimension " + std::to_string(query.size()) + ", index has " +
                     std::to_string(index.dim()));
  }
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    scores[i] = model::similarity(index.row(i), query);
  }
  return scores;
}

RankingResult rank(const RetrievalIndex& index, std::span<const float> query, std::size_t k,
                   std::string query_id, const std::optional<std::string>& target) {
  if (index.empty()) {
    throw IndexError("cannot rank against an empty index");
  }
  if (k == 0) {
    throw IndexError("k must be at least 1");
  }
  const auto scores = score_all(index, query);
  const auto& ids = index.ids();
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) {
      return scores[a] > scores[b];
    }
    return ids[a] < ids[b];
  };
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, index.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);

  RankingResult r;
  r.query_id = std::move(query_id);
  for (std::size_t i = 0; i < k; ++i) {
    r.ranking.push_back({ids[order[i]], scores[order[i]]});
  }
  if (target) {
    const auto t = index.index_of(*target);
    if (!t) {
      throw IndexError("target image '" + *target + "' is not in the index");
    }
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (i != *t && before(i, *t)) {
        ++ahead;
      }
    }
    r.rank_of_target = ahead + 1;
  }
  return r;
}

}  // namespace mqir::retrieval
