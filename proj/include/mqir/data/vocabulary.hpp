#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mqir/data/narrative.hpp"
#include "mqir/geometry/trace_geometry.hpp"

namespace mqir::data {

class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Byte-pair-style subword vocabulary. Id 0 is PAD and id 1 is UNK; the
/// single characters of the corpus follow in code-point order, then one entry
/// per learned merge.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::size_t kReserved = 2;

  Vocabulary() = default;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  /// Id of an exact subword string, or kUnk.
  std::int32_t id(std::string_view token) const;
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  /// Subword ids for one already-normalised word. A word containing a
  /// character outside the vocabulary maps to a single UNK.
  std::vector<std::int32_t> encode_word(std::string_view word) const;
  std::vector<std::string> split_word(std::string_view word) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.merges_ == b.merges_;
  }

 private:
  friend Vocabulary build_vocabulary(const std::vector<std::string>&, std::size_t);
  friend std::size_t max_vocabulary_size(const std::vector<std::string>&);

  void add_token(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
};

/// UTF-8 code points of `word`, each as its own string.
std::vector<std::string> split_characters(std::string_view word);

/// Learns merges over the normalised words of `captions` (most frequent
/// adjacent pair first, ties broken by the lexicographically smaller pair)
/// until the vocabulary holds exactly `target_size` entries.
Vocabulary build_vocabulary(const std::vector<std::string>& captions, std::size_t target_size);

/// Size reached when merging continues until every word is a single token.
std::size_t max_vocabulary_size(const std::vector<std::string>& captions);

/// Subword tokens of a record; each inherits its parent word's interval.
std::vector<geometry::TimedToken> tokenize_aligned(const NarrativeRecord& record,
                                                   const Vocabulary& vocab);

}  // namespace mqir::data
