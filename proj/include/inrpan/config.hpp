#pragma once

// Plain-text `key = value` files with `#` comments.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace inrpan {

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

}  // namespace detail

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<stream>") {
    KeyValueConfig config;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::string body = detail::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(number) +
                          ": expected `key = value`");
      }
      std::string key = detail::trim(std::string_view(body).substr(0, eq));
      if (key.empty()) {
        throw ConfigError(source + ":" + std::to_string(number) + ": empty key");
      }
      config.values_[key] = detail::trim(std::string_view(body).substr(eq + 1));
    }
    return config;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse(in, path.string());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key `" + key + "`");
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }

  double get_double(const std::string& key) const {
    return convert<double>(key, get_string(key));
  }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }
  long get_int(const std::string& key) const {
    return convert<long>(key, get_string(key));
  }
  long get_int(const std::string& key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }
  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key `" + key + "`: not a boolean: " + v);
  }
  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream stream(get_string(key));
    std::string item;
    while (std::getline(stream, item, ',')) out.push_back(convert<double>(key, detail::trim(item)));
    return out;
  }

 private:
  template <typename T>
  static T convert(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T value{};
    in >> value;
    if (in.fail() || !in.eof()) {
      throw ConfigError("config key `" + key + "`: cannot parse `" + text + "`");
    }
    return value;
  }

  std::map<std::string, std::string> values_;
};

/// Comma-joined list with round-trip precision.
template <typename Range>
std::string join_list(const Range& values) {
  std::ostringstream out;
  out.precision(9);
  bool first = true;
  for (const auto& v : values) {
    if (!first) out << ',';
    out << v;
    first = false;
  }
  return out.str();
}

}  // namespace inrpan
