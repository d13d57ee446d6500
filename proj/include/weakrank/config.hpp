#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "weakrank/error.hpp"

namespace weakrank {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Flat `key = value` configuration. Keys may be dotted (`rerank.k1`).
/// Lines starting with `#` are comments. Later assignments win, so command
/// line overrides are applied with set() after load().
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text, std::string_view origin = "<string>") {
    Config cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      const std::string_view line = detail::trim(text.substr(pos, end - pos));
      ++line_no;
      pos = end + 1;
      if (line.empty() || line.front() == '#') continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        fail(ErrorKind::InvalidConfig,
             std::string(origin) + ":" + std::to_string(line_no) + ": expected `key = value`");
      }
      const std::string_view key = detail::trim(line.substr(0, eq));
      if (key.empty()) {
        fail(ErrorKind::InvalidConfig, std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
      }
      cfg.set(std::string(key), std::string(detail::trim(line.substr(eq + 1))));
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorKind::InvalidConfig, "missing required key `" + key + "`");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double out = 0.0;
    const auto& s = it->second;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      fail(ErrorKind::InvalidConfig, "key `" + key + "`: expected a number, got `" + s + "`");
    }
    return out;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::int64_t out = 0;
    const auto& s = it->second;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
      fail(ErrorKind::InvalidConfig, "key `" + key + "`: expected an integer, got `" + s + "`");
    }
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail(ErrorKind::InvalidConfig, "key `" + key + "`: expected a boolean, got `" + s + "`");
  }

  /// Whitespace-separated list value.
  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get_string(key, ""));
    for (std::string item; in >> item;) out.push_back(item);
    return out;
  }

  /// Reject keys that no consumer knows about; typos otherwise go unnoticed.
  void require_known(const std::set<std::string>& known, const std::set<std::string>& known_prefixes = {}) const {
    for (const auto& [key, value] : values_) {
      if (known.count(key)) continue;
      const bool prefixed = std::any_of(known_prefixes.begin(), known_prefixes.end(),
                                        [&](const std::string& p) { return key.rfind(p, 0) == 0; });
      if (!prefixed) fail(ErrorKind::InvalidConfig, "unknown configuration key `" + key + "`");
    }
  }

  /// Sorted `key = value` dump; parse(dump()) reproduces the config.
  std::string dump() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace weakrank
