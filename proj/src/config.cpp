#include "dlmbir/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dlmbir/detail/binary_io.hpp"
#include "dlmbir/errors.hpp"

namespace dlmbir {

Config Config::parse(std::istream& is, const std::string& origin) {
  Config cfg;
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (cfg.contains(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError(FormatError::Kind::not_found, "cannot open config '" + path.string() + "'");
  return parse(is, path.string());
}

void Config::merge(const Config& over) {
  for (const auto& [k, v] : over.values_) values_[k] = v;
}

void Config::require_known(const std::set<std::string>& allowed, const std::string& context) const {
  std::string unknown;
  for (const auto& [k, v] : values_)
    if (!allowed.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) throw ConfigError(context + ": unknown config keys: " + unknown);
}

const std::string& Config::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

namespace {

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("config key '" + key + "' has invalid value '" + text + "'");
  return value;
}

}  // namespace

double Config::get_double(const std::string& key) const { return parse_number<double>(key, get_string(key)); }
std::int64_t Config::get_int(const std::string& key) const { return parse_number<std::int64_t>(key, get_string(key)); }
std::uint64_t Config::get_uint(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get_string(key));
}

bool Config::get_bool(const std::string& key) const {
  try {
    return parse_bool(get_string(key));
  } catch (const std::invalid_argument&) {
    throw ConfigError("config key '" + key + "' has invalid boolean '" + get_string(key) + "'");
  }
}

std::string Config::echo(const std::string& line_prefix) const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << line_prefix << k << " = " << v << '\n';
  return os.str();
}

bool parse_bool(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw std::invalid_argument("not a boolean: '" + text + "'");
}

}  // namespace dlmbir
