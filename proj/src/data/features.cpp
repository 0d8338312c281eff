#include "mqir/data/features.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>
#include <fstream>
#include <stdexcept>

#include "mqir/data/binary_io.hpp"
#include "mqir/numerics/random.hpp"

namespace mqir::data {

std::size_t FeatureRecord::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

FeatureSet::FeatureSet(std::uint32_t global_dim, std::uint32_t region_dim, std::uint32_t regions)
    : global_dim_(global_dim), region_dim_(region_dim), regions_(regions) {
  if (global_dim == 0 || region_dim == 0 || regions == 0) {
    throw std::invalid_argument("FeatureSet: dimensions must be positive");
  }
}

void FeatureSet::add(FeatureRecord record) {
  const auto bad = [&](const std::string& what) {
    return std::invalid_argument("feature record '" + record.image_id + "': " + what);
  };
  if (record.image_id.empty()) {
    throw bad("empty image_id");
  }
  if (record.global.size() != global_dim_) {
    throw bad("global vector has " + std::to_string(record.global.size()) + " values, expected " +
              std::to_string(global_dim_));
  }
  if (record.regions.size() != std::size_t{regions_} * region_dim_) {
    throw bad("regional block has wrong size");
  }
  if (record.geometry.size() != std::size_t{regions_} * 5 || record.valid.size() != regions_) {
    throw bad("geometry or validity has wrong size");
  }
  for (std::uint8_t v : record.valid) {
    if (v > 1) {
      throw bad("validity flag must be 0 or 1");
    }
  }
  if (index_.contains(record.image_id)) {
    throw bad("duplicate image_id");
  }
  index_.emplace(record.image_id, records_.size());
  records_.push_back(std::move(record));
}

const FeatureRecord* FeatureSet::find(const std::string& image_id) const {
  auto it = index_.find(image_id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

const FeatureRecord& FeatureSet::at(const std::string& image_id) const {
  const FeatureRecord* r = find(image_id);
  if (r == nullptr) {
    throw std::out_of_range("no feature record for image '" + image_id + "'");
  }
  return *r;
}

FeatureSet FeatureSet::subset(const std::vector<std::string>& image_ids) const {
  FeatureSet out(global_dim_, region_dim_, regions_);
  for (const std::string& id : image_ids) {
    out.add(at(id));
  }
  return out;
}

FeatureRecord make_feature_record(std::string image_id, std::vector<float> global,
                                  const std::vector<std::vector<float>>& region_vectors,
                                  const std::vector<geometry::TraceBox>& boxes,
                                  std::uint32_t regions, std::uint32_t region_dim) {
  if (region_vectors.size() != boxes.size()) {
    throw std::invalid_argument("make_feature_record: region vectors and boxes differ in count");
  }
  if (region_vectors.size() > regions) {
    throw std::invalid_argument("make_feature_record: more than " + std::to_string(regions) +
                                " regions supplied");
  }
  FeatureRecord r;
  r.image_id = std::move(image_id);
  r.global = std::move(global);
  r.regions.assign(std::size_t{regions} * region_dim, 0.0f);
  r.geometry.reserve(std::size_t{regions} * 5);
  r.valid.assign(regions, 0);
  for (std::size_t i = 0; i < regions; ++i) {
    const bool present = i < region_vectors.size();
    if (present) {
      if (region_vectors[i].size() != region_dim) {
        throw std::invalid_argument("make_feature_record: region vector has wrong dimension");
      }
      std::copy(region_vectors[i].begin(), region_vectors[i].end(),
                r.regions.begin() + static_cast<std::ptrdiff_t>(i * region_dim));
      r.valid[i] = 1;
    }
    const auto g = (present ? boxes[i] : geometry::TraceBox::whole_canvas()).as_features();
    r.geometry.insert(r.geometry.end(), g.begin(), g.end());
  }
  return r;
}

void write_features(const std::filesystem::path& path, const FeatureSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write feature file " + path.string());
  }
  io::write_magic(out, "MQIR");
  io::write_u32(out, kFeatureFormatVersion);
  io::write_u32(out, set.global_dim());
  io::write_u32(out, set.region_dim());
  io::write_u32(out, set.regions());
  const std::size_t d_r = set.region_dim();
  for (const FeatureRecord& r : set.records()) {
    io::write_string(out, r.image_id);
    io::write_floats(out, r.global);
    for (std::size_t i = 0; i < set.regions(); ++i) {
      io::write_floats(out, r.region(i, d_r));
      io::write_floats(out, std::span<const float>(r.geometry.data() + i * 5, 5));
      out.put(static_cast<char>(r.valid[i]));
    }
  }
  if (!out) {
    throw std::runtime_error("error writing feature file " + path.string());
  }
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open feature file " + path.string());
  }
  const std::string source = "feature file " + path.string();
  io::expect_magic(in, "MQIR", source);
  const std::uint32_t version = io::read_u32(in, "version");
  if (version != kFeatureFormatVersion) {
    throw io::BinaryFormatError(source + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t d_g = io::read_u32(in, "D_g");
  const std::uint32_t d_r = io::read_u32(in, "D_r");
  const std::uint32_t n = io::read_u32(in, "N");
  if (d_g == 0 || d_r == 0 || n == 0 || d_g > (1u << 20) || d_r > (1u << 20) || n > 4096) {
    throw io::BinaryFormatError(source + ": implausible dimensions");
  }
  FeatureSet set(d_g, d_r, n);
  while (in.peek() != std::char_traits<char>::eof()) {
    FeatureRecord r;
    r.image_id = io::read_string(in, "image_id");
    r.global.resize(d_g);
    io::read_floats(in, r.global, "global vector");
    r.regions.resize(std::size_t{n} * d_r);
    r.geometry.resize(std::size_t{n} * 5);
    r.valid.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      io::read_floats(in, std::span<float>(r.regions.data() + i * d_r, d_r), "region vector");
      io::read_floats(in, std::span<float>(r.geometry.data() + i * 5, 5), "region geometry");
      const int v = in.get();
      if (v == std::char_traits<char>::eof()) {
        throw io::BinaryFormatError(source + ": truncated input reading validity byte");
      }
      r.valid[i] = static_cast<std::uint8_t>(v);
    }
    try {
      set.add(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw io::BinaryFormatError(source + ": " + e.what());
    }
  }
  return set;
}

std::string features_id(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open feature file " + path.string());
  }
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  char buf[32];
  std::snprintf(buf, sizeof buf, "mqir-%016llx", static_cast<unsigned long long>(hash_name(bytes)));
  return buf;
}

}  // namespace mqir::data
