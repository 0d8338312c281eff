#include "mqir/data/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace mqir::data {
namespace {

using Symbols = std::vector<std::string>;
using Pair = std::pair<std::string, std::string>;

constexpr const char* kHeader = "mqir-vocabulary 1";

std::map<std::string, std::size_t> word_counts(const std::vector<std::string>& captions) {
  std::map<std::string, std::size_t> counts;
  for (const std::string& c : captions) {
    for (std::string& w : normalized_words(c)) {
      ++counts[std::move(w)];
    }
  }
  return counts;
}

void apply_merge(Symbols& symbols, const Pair& pair) {
  Symbols out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(pair.first + pair.second);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

struct MergeLearner {
  std::vector<std::pair<Symbols, std::size_t>> words;

  explicit MergeLearner(const std::vector<std::string>& captions) {
    for (const auto& [w, n] : word_counts(captions)) {
      words.emplace_back(split_characters(w), n);
    }
  }

  std::set<std::string> characters() const {
    std::set<std::string> chars;
    for (const auto& [symbols, n] : words) {
      chars.insert(symbols.begin(), symbols.end());
    }
    return chars;
  }

  /// Most frequent adjacent pair; ties go to the smaller pair. False when
  /// every word is already a single symbol.
  bool best_pair(Pair& best) const {
    std::map<Pair, std::size_t> counts;
    for (const auto& [symbols, n] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        counts[{symbols[i], symbols[i + 1]}] += n;
      }
    }
    std::size_t best_count = 0;
    for (const auto& [pair, n] : counts) {
      if (n > best_count) {
        best_count = n;
        best = pair;
      }
    }
    return best_count > 0;
  }

  void merge(const Pair& pair) {
    for (auto& [symbols, n] : words) {
      apply_merge(symbols, pair);
    }
  }
};

}  // namespace

std::vector<std::string> split_characters(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

void Vocabulary::add_token(const std::string& token) {
  if (ids_.emplace(token, static_cast<std::int32_t>(tokens_.size())).second) {
    tokens_.push_back(token);
  }
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::string> Vocabulary::split_word(std::string_view word) const {
  Symbols symbols = split_characters(word);
  for (const std::string& s : symbols) {
    if (!ids_.contains(s)) {
      return {tokens_.at(kUnk)};
    }
  }
  while (symbols.size() > 1) {
    std::size_t best_rank = merge_rank_.size();
    const Pair* best = nullptr;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = &it->first;
      }
    }
    if (best == nullptr) {
      break;
    }
    apply_merge(symbols, *best);
  }
  return symbols;
}

std::vector<std::int32_t> Vocabulary::encode_word(std::string_view word) const {
  std::vector<std::int32_t> ids;
  for (const std::string& s : split_word(word)) {
    ids.push_back(id(s));
  }
  return ids;
}

Vocabulary build_vocabulary(const std::vector<std::string>& captions, std::size_t target_size) {
  MergeLearner learner(captions);
  if (learner.words.empty()) {
    throw VocabularyError("build_vocabulary: corpus has no words");
  }
  const std::set<std::string> chars = learner.characters();
  if (target_size <= Vocabulary::kReserved + chars.size()) {
    throw VocabularyError("build_vocabulary: target size " + std::to_string(target_size) +
                          " must exceed " + std::to_string(Vocabulary::kReserved + chars.size()) +
                          " (reserved ids plus distinct characters)");
  }
  Vocabulary v;
  v.add_token("<pad>");
  v.add_token("<unk>");
  for (const std::string& c : chars) {
    v.add_token(c);
  }
  while (v.size() < target_size) {
    Pair best;
    if (!learner.best_pair(best)) {
      throw VocabularyError("build_vocabulary: corpus supports at most " +
                            std::to_string(v.size()) + " entries, " +
                            std::to_string(target_size) + " requested");
    }
    learner.merge(best);
    v.merge_rank_.emplace(best, v.merges_.size());
    v.merges_.push_back(best);
    v.add_token(best.first + best.second);
  }
  return v;
}

std::size_t max_vocabulary_size(const std::vector<std::string>& captions) {
  MergeLearner learner(captions);
  std::set<std::string> tokens = learner.characters();
  Pair best;
  while (learner.best_pair(best)) {
    learner.merge(best);
    tokens.insert(best.first + best.second);
  }
  return Vocabulary::kReserved + tokens.size();
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw VocabularyError("cannot write vocabulary " + path.string());
  }
  out << kHeader << '\n' << "tokens " << tokens_.size() << '\n';
  for (const std::string& t : tokens_) {
    out << t << '\n';
  }
  out << "merges " << merges_.size() << '\n';
  for (const auto& [a, b] : merges_) {
    out << a << ' ' << b << '\n';
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw VocabularyError("cannot open vocabulary " + path.string());
  }
  auto fail = [&](const std::string& what) -> VocabularyError {
    return VocabularyError("vocabulary " + path.string() + ": " + what);
  };
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw fail("bad header");
  }
  std::string word;
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "tokens") {
    throw fail("missing token count");
  }
  std::getline(in, line);
  Vocabulary v;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line) || line.empty()) {
      throw fail("truncated token list");
    }
    v.add_token(line);
  }
  if (v.size() != count || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<unk>") {
    throw fail("duplicate or missing reserved tokens");
  }
  if (!(in >> word >> count) || word != "merges") {
    throw fail("missing merge count");
  }
  std::getline(in, line);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) {
      throw fail("truncated merge list");
    }
    const auto space = line.find(' ');
    if (space == std::string::npos) {
      throw fail("malformed merge '" + line + "'");
    }
    Pair p{line.substr(0, space), line.substr(space + 1)};
    v.merge_rank_.emplace(p, v.merges_.size());
    v.merges_.push_back(std::move(p));
  }
  return v;
}

std::vector<geometry::TimedToken> tokenize_aligned(const NarrativeRecord& record,
                                                   const Vocabulary& vocab) {
  std::vector<geometry::TimedToken> out;
  for (const TimedWord& w : record.timed_words) {
    for (const std::string& piece : normalized_words(w.word)) {
      for (std::int32_t id : vocab.encode_word(piece)) {
        out.push_back({id, w.t_start, w.t_end});
      }
    }
  }
  return out;
}

}  // namespace mqir::data
