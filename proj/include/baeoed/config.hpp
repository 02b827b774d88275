#ifndef BAEOED_CONFIG_HPP
#define BAEOED_CONFIG_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "baeoed/error.hpp"

namespace baeoed {

/// Plain-text key=value settings, one pair per line, '#' starts a comment.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is, const std::string& origin = "config") {
    Config c;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw FormatError(origin + ":" + std::to_string(line_no) + ": expected key=value");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw FormatError(origin + ":" + std::to_string(line_no) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    return parse(is, path.string());
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw FormatError("config key '" + key + "' is not a number: " + it->second);
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw FormatError("config key '" + key + "' is not an integer: " + it->second);
    }
  }

  /// Entries of other override entries of this.
  Config merged(const Config& other) const {
    Config c = *this;
    for (const auto& [k, v] : other.values_) c.values_[k] = v;
    return c;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace baeoed

#endif  // BAEOED_CONFIG_HPP
