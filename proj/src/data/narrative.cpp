#include "mqir/data/narrative.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mqir::data {

using nlohmann::json;

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (c < 0x80 && std::ispunct(c)) {
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

std::vector<std::string> normalized_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in(normalize_text(text));
  std::string w;
  while (in >> w) {
    words.push_back(w);
  }
  return words;
}

void validate_record(const NarrativeRecord& record) {
  if (record.image_id.empty()) {
    throw FormatError("image_id: empty");
  }
  std::string joined;
  for (std::size_t i = 0; i < record.timed_words.size(); ++i) {
    const TimedWord& w = record.timed_words[i];
    if (!std::isfinite(w.t_start) || !std::isfinite(w.t_end) || w.t_start > w.t_end) {
      throw FormatError("timed_words[" + std::to_string(i) + "]: invalid interval");
    }
    if (i > 0 && w.t_start < record.timed_words[i - 1].t_end) {
      throw FormatError("timed_words[" + std::to_string(i) + "]: overlaps previous word");
    }
    joined += (i ? " " : "") + w.word;
  }
  if (normalize_text(joined) != normalize_text(record.caption)) {
    throw FormatError("timed_words: words do not match caption");
  }
  try {
    geometry::validate_trace(record.trace);
  } catch (const geometry::GeometryError& e) {
    throw FormatError(std::string("trace: ") + e.what());
  }
}

namespace {

const json& field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end()) {
    throw FormatError(std::string(name) + ": missing");
  }
  return *it;
}

double number(const json& v, const std::string& where) {
  if (!v.is_number()) {
    throw FormatError(where + ": expected a number");
  }
  return v.get<double>();
}

NarrativeRecord from_json(const json& obj) {
  if (!obj.is_object()) {
    throw FormatError("record: expected an object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (key != "image_id" && key != "caption" && key != "timed_words" && key != "trace") {
      throw FormatError(key + ": unknown field");
    }
  }
  NarrativeRecord r;
  const json& id = field(obj, "image_id");
  if (!id.is_string()) {
    throw FormatError("image_id: expected a string");
  }
  r.image_id = id.get<std::string>();
  const json& caption = field(obj, "caption");
  if (!caption.is_string()) {
    throw FormatError("caption: expected a string");
  }
  r.caption = caption.get<std::string>();

  const json& words = field(obj, "timed_words");
  if (!words.is_array()) {
    throw FormatError("timed_words: expected an array");
  }
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string where = "timed_words[" + std::to_string(i) + "]";
    const json& w = words[i];
    if (!w.is_array() || w.size() != 3 || !w[0].is_string()) {
      throw FormatError(where + ": expected [word, t_start, t_end]");
    }
    r.timed_words.push_back({w[0].get<std::string>(), number(w[1], where), number(w[2], where)});
  }

  const json& trace = field(obj, "trace");
  if (!trace.is_array()) {
    throw FormatError("trace: expected an array");
  }
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const std::string where = "trace[" + std::to_string(i) + "]";
    const json& p = trace[i];
    if (!p.is_array() || p.size() != 3) {
      throw FormatError(where + ": expected [x, y, t]");
    }
    r.trace.points.push_back(
        geometry::clip_point({number(p[0], where), number(p[1], where), number(p[2], where)}));
  }
  validate_record(r);
  return r;
}

}  // namespace

NarrativeRecord parse_narrative(std::string_view line, std::size_t line_number) {
  const std::string prefix = "line " + std::to_string(line_number) + ": ";
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(prefix + "record: malformed JSON (" + e.what() + ")");
  }
  try {
    return from_json(obj);
  } catch (const FormatError& e) {
    throw FormatError(prefix + e.what());
  }
}

std::string format_narrative(const NarrativeRecord& record) {
  json words = json::array();
  for (const TimedWord& w : record.timed_words) {
    words.push_back(json::array({w.word, w.t_start, w.t_end}));
  }
  json trace = json::array();
  for (const auto& p : record.trace.points) {
    trace.push_back(json::array({p.x, p.y, p.t}));
  }
  json obj = {{"image_id", record.image_id},
              {"caption", record.caption},
              {"timed_words", std::move(words)},
              {"trace", std::move(trace)}};
  return obj.dump();
}

std::vector<NarrativeRecord> load_narratives(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open narrative file " + path.string());
  }
  std::vector<NarrativeRecord> records;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    NarrativeRecord r = parse_narrative(line, line_number);
    if (!seen.insert(r.image_id).second) {
      throw FormatError("line " + std::to_string(line_number) + ": image_id: duplicate '" +
                        r.image_id + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_narratives(const std::filesystem::path& path, const std::vector<NarrativeRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw FormatError("cannot write narrative file " + path.string());
  }
  for (const NarrativeRecord& r : records) {
    out << format_narrative(r) << '\n';
  }
}

}  // namespace mqir::data
