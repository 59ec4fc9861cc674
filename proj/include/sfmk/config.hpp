#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sfmk/common.hpp"

namespace sfmk {

// Flat key=value configuration text. Lines starting with '#' and blank
// lines are ignored; keys keep insertion order on save so snapshots diff
// cleanly.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) +
                          " is not key=value: " + t);
      c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write config: " + path);
    os << text();
    if (!os) throw IoError("failed writing config: " + path);
  }

  std::string text() const {
    std::string out;
    for (const auto& k : order_) out += k + "=" + values_.at(k) + "\n";
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key " + key);
    return it->second;
  }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    return has(key) ? values_.at(key) : dflt;
  }

  int64_t get_int(const std::string& key) const {
    return to_int(key, get_str(key));
  }

  int64_t get_int(const std::string& key, int64_t dflt) const {
    return has(key) ? to_int(key, values_.at(key)) : dflt;
  }

  double get_real(const std::string& key) const {
    return to_real(key, get_str(key));
  }

  double get_real(const std::string& key, double dflt) const {
    return has(key) ? to_real(key, values_.at(key)) : dflt;
  }

  bool get_bool(const std::string& key) const {
    return to_bool(key, get_str(key));
  }

  bool get_bool(const std::string& key, bool dflt) const {
    return has(key) ? to_bool(key, values_.at(key)) : dflt;
  }

  const std::vector<std::string>& keys() const { return order_; }

  bool operator==(const Config& other) const {
    return order_ == other.order_ && values_ == other.values_;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static int64_t to_int(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      int64_t x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not an integer: " + v);
    }
  }

  static double to_real(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " is not a number: " + v);
    }
  }

  static bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key " + key + " is not a boolean: " + v);
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

}  // namespace sfmk
