#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mqir::cli {

/// Bad configuration or usage; the CLI exits with status 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ValueKind { integer, real, flag, text, path };

/// One tunable. Keys are unique across sections, so a key alone names it
/// on the command line (--kebab-case) and in the environment (MQIR_UPPER).
struct KeySpec {
  std::string section;
  std::string key;
  std::string default_value;
  ValueKind kind;
  std::string help;
};

/// Every key in file order.
const std::vector<KeySpec>& key_specs();
const KeySpec* find_key(const std::string& key);

std::string flag_name(const std::string& key);  // "t_p" -> "t-p"
std::string env_name(const std::string& key);   // "t_p" -> "MQIR_T_P"

/// Effective values for every key, with typed accessors.
class RunConfig {
 public:
  /// Built-in defaults.
  RunConfig();

  /// Overwrites `key`; throws ConfigError for an unknown key or a value
  /// that does not parse as the key's kind.
  void set(const std::string& key, const std::string& value);
  const std::string& raw(const std::string& key) const;

  std::int64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // non-negative integer
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  const std::string& text(const std::string& key) const { return raw(key); }
  /// Empty when unset.
  std::filesystem::path path(const std::string& key) const;
  /// Throws ConfigError naming the key when it is unset.
  std::filesystem::path required_path(const std::string& key) const;

  /// Applies a `key = value` file with [section] headers. Comments start
  /// with '#'. A key under the wrong section is an error.
  void merge_file(const std::filesystem::path& file);
  void merge_text(const std::string& text, const std::string& origin);
  /// Applies MQIR_<KEY> variables found through `lookup`.
  void merge_environment(const std::function<std::optional<std::string>(const std::string&)>& lookup);

  /// The file format read by merge_file, listing every key.
  std::string to_text() const;
  std::map<std::string, std::map<std::string, std::string>> sections() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mqir::cli
