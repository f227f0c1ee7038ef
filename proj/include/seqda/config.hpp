#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqda {

/// Flat "key = value" configuration. '#' starts a comment. Keys are kept
/// sorted so the text form is canonical.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config '" + path + "'");
    out << to_text();
  }

  std::string to_text() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, double value) { values_[key] = format(value); }
  void set(const std::string& key, std::int64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, int value) { values_[key] = std::to_string(value); }
  void merge(const KeyValueConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : to_double(key, it->second);
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::int64_t v = 0;
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw std::invalid_argument("config key '" + key + "': '" + s + "' is not an integer");
    return v;
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const auto& tok : split_list(it->second)) out.push_back(to_double(key, tok));
    return out;
  }

  std::vector<std::string> get_list(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? std::vector<std::string>{} : split_list(it->second);
  }

  static std::string format(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',' || ch == ' ' || ch == '\t') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    const auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument("config key '" + key + "': '" + s + "' is not a number");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace seqda
