#pragma once

// Flat "key = value" configuration files. '#' starts a comment line; keys
// are case-sensitive; later duplicates are an error.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace dlmbir {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ordered key/value settings with typed accessors. Layering (defaults <
/// file < flags) is done with merge().
class Config {
 public:
  Config() = default;
  Config(std::initializer_list<std::pair<const std::string, std::string>> init) : values_(init) {}

  static Config parse(std::istream& is, const std::string& origin = "<config>");
  static Config load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  /// Entries of `over` replace entries here.
  void merge(const Config& over);

  /// Throws ConfigError listing every key not in `allowed`.
  void require_known(const std::set<std::string>& allowed, const std::string& context) const;

  const std::string& get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// One "key = value" line per entry, sorted by key.
  std::string echo(const std::string& line_prefix = "") const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Accepts true/false, yes/no, on/off, 1/0 (case-insensitive).
bool parse_bool(const std::string& text);

}  // namespace dlmbir
