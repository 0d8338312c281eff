#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqir/geometry/trace_geometry.hpp"

namespace mqir::data {

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// Image representation: one global vector plus exactly N regional vectors.
/// Missing regions are zero vectors with whole-image geometry and valid = 0.
/// The global entry's geometry is implicitly the whole image.
struct FeatureRecord {
  std::string image_id;
  std::vector<float> global;         // global_dim
  std::vector<float> regions;        // regions * region_dim
  std::vector<float> geometry;       // regions * 5, (xmin, ymin, xmax, ymax, area)
  std::vector<std::uint8_t> valid;   // regions

  std::span<const float> region(std::size_t i, std::size_t region_dim) const {
    return {regions.data() + i * region_dim, region_dim};
  }
  std::size_t valid_count() const;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

class FeatureSet {
 public:
  FeatureSet() = default;
  FeatureSet(std::uint32_t global_dim, std::uint32_t region_dim, std::uint32_t regions);

  std::uint32_t global_dim() const { return global_dim_; }
  std::uint32_t region_dim() const { return region_dim_; }
  std::uint32_t regions() const { return regions_; }
  const std::vector<FeatureRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  /// Validates dimensions and appends; throws on duplicates.
  void add(FeatureRecord record);
  const FeatureRecord* find(const std::string& image_id) const;
  const FeatureRecord& at(const std::string& image_id) const;

  /// Records whose ids are listed, in the listed order.
  FeatureSet subset(const std::vector<std::string>& image_ids) const;

  friend bool operator==(const FeatureSet& a, const FeatureSet& b) {
    return a.global_dim_ == b.global_dim_ && a.region_dim_ == b.region_dim_ &&
           a.regions_ == b.regions_ && a.records_ == b.records_;
  }

 private:
  std::uint32_t global_dim_ = 0;
  std::uint32_t region_dim_ = 0;
  std::uint32_t regions_ = 0;
  std::vector<FeatureRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Builds a record from however many regions are available (at most
/// `regions`), padding the rest.
FeatureRecord make_feature_record(std::string image_id, std::vector<float> global,
                                  const std::vector<std::vector<float>>& region_vectors,
                                  const std::vector<geometry::TraceBox>& boxes,
                                  std::uint32_t regions, std::uint32_t region_dim);

/// Binary little-endian file: "MQIR", version, D_g, D_r, N, then records.
void write_features(const std::filesystem::path& path, const FeatureSet& set);
FeatureSet read_features(const std::filesystem::path& path);

/// Short stable identifier derived from the feature file bytes.
std::string features_id(const std::filesystem::path& path);

}  // namespace mqir::data
