#include "pct/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "pct/errors.hpp"

namespace pct {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T value{};
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError(what + ": cannot parse '" + text + "' as a number");
  return value;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (cfg.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    cfg.values_[key] = value;
    cfg.lines_[key] = number;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  return parse(in, source);
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse(in, path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  const auto line = lines_.count(key) ? ":" + std::to_string(lines_.at(key)) : std::string();
  return parse_number<double>(*v, source_ + line + " " + key);
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  const auto line = lines_.count(key) ? ":" + std::to_string(lines_.at(key)) : std::string();
  return parse_number<long>(*v, source_ + line + " " + key);
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  const long v = get_int(key, static_cast<long>(fallback));
  if (v < 0) throw ConfigError(source_ + ": " + key + " must be nonnegative");
  return static_cast<std::size_t>(v);
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  if (v->empty()) return out;
  const auto line = lines_.count(key) ? ":" + std::to_string(lines_.at(key)) : std::string();
  for (const std::string& item : split_list(*v)) out.push_back(parse_number<double>(item, source_ + line + " " + key));
  return out;
}

std::vector<long> KeyValueConfig::get_ints(const std::string& key, const std::vector<long>& fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<long> out;
  if (v->empty()) return out;
  const auto line = lines_.count(key) ? ":" + std::to_string(lines_.at(key)) : std::string();
  for (const std::string& item : split_list(*v)) out.push_back(parse_number<long>(item, source_ + line + " " + key));
  return out;
}

void KeyValueConfig::check_keys(const std::set<std::string>& allowed) const {
  for (const auto& [key, value] : values_) {
    if (!allowed.count(key)) {
      throw ConfigError(source_ + ":" + std::to_string(lines_.count(key) ? lines_.at(key) : 0) + ": unknown key '" +
                        key + "'");
    }
  }
}

std::string KeyValueConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << '=' << value << '\n';
  return os.str();
}

std::string join_doubles(const std::vector<double>& values) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

std::string join_ints(const std::vector<long>& values) {
  std::ostringstream os;
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

}  // namespace pct
