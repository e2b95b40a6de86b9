#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace pct {

// Flat `key=value` text: one entry per line, `#` starts a comment, blank lines
// are ignored. Lists are comma separated.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  // Throws ConfigError naming the source and line of a malformed entry.
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig parse_string(const std::string& text, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<long> get_ints(const std::string& key, const std::vector<long>& fallback) const;

  // Throws ConfigError for keys outside `allowed`.
  void check_keys(const std::set<std::string>& allowed) const;

  // Sorted `key=value` lines.
  std::string serialize() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
};

std::string join_doubles(const std::vector<double>& values);
std::string join_ints(const std::vector<long>& values);

}  // namespace pct
