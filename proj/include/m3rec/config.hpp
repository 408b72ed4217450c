// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "m3rec/errors.hpp"

namespace m3rec {

// Flat `key = value` configuration. '#' starts a comment; blank lines are
// skipped. Unknown keys are rejected against the documented schema, with
// `weight.<task>` allowed as a prefixed family.
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_string(buf.str(), path);
  }

  static KvConfig parse_string(const std::string& text, const std::string& origin = "") {
    KvConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ParseError(origin + " line " + std::to_string(lineno) +
                         ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string val = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ParseError(origin + " line " + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = val;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  // Every key must be in `known` or start with a prefix listed in `prefixes`.
  void reject_unknown(const std::set<std::string>& known,
                      const std::vector<std::string>& prefixes = {}) const {
    for (const auto& [k, v] : values_) {
      if (known.count(k)) continue;
      bool ok = false;
      for (const std::string& p : prefixes)
        if (k.rfind(p, 0) == 0) {
          ok = true;
          break;
        }
      if (!ok) throw ConfigError("config: unknown key '" + k + "'");
    }
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" +
                        it->second + "'");
    }
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' expects a number, got '" +
                        it->second + "'");
    }
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<std::string> out;
    std::istringstream ls(it->second);
    std::string part;
    while (std::getline(ls, part, ',')) {
      const std::string p = trim(part);
      if (!p.empty()) out.push_back(p);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace m3rec
