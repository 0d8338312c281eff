#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mqir/geometry/trace_geometry.hpp"

namespace mqir::data {

struct TimedWord {
  std::string word;
  double t_start = 0.0;
  double t_end = 0.0;

  friend bool operator==(const TimedWord&, const TimedWord&) = default;
};

/// One caption with word timings and the synchronised pointer trace.
struct NarrativeRecord {
  std::string image_id;
  std::string caption;
  std::vector<TimedWord> timed_words;
  geometry::MouseTrace trace;

  friend bool operator==(const NarrativeRecord&, const NarrativeRecord&) = default;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lower-cases ASCII letters, drops punctuation and collapses whitespace.
std::string normalize_text(std::string_view text);

/// Whitespace-separated words of the normalised text.
std::vector<std::string> normalized_words(std::string_view text);

/// Checks the record invariants: word timings ordered and non-overlapping,
/// words matching the caption, trace timestamps non-decreasing.
void validate_record(const NarrativeRecord& record);

/// Parses one JSON line; `line_number` is used in error messages. Trace
/// coordinates are clipped to [0, 1].
NarrativeRecord parse_narrative(std::string_view line, std::size_t line_number);
std::string format_narrative(const NarrativeRecord& record);

/// Reads a narrative file (one JSON object per line; blank lines skipped).
/// Throws FormatError naming the line and field, or on duplicate image ids.
std::vector<NarrativeRecord> load_narratives(const std::filesystem::path& path);
void save_narratives(const std::filesystem::path& path, const std::vector<NarrativeRecord>& records);

}  // namespace mqir::data
