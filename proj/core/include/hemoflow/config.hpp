#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hemoflow/common.hpp"

namespace hemoflow::config {

// Flat key=value configuration with [section] headers and '#' comments.
// Keys are addressed as "section.key". Reads track which keys were consumed
// so unknown keys can be reported; writes emit a canonical echo that parses
// back to the same table.
class Config {
 public:
  Config() = default;

  static Config parse_file(const std::string& path);
  static Config parse(const std::string& text, const std::string& origin);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long value);
  void set_bool(const std::string& key, bool value);

  // Keys present in the file but never read; used to flag typos.
  std::vector<std::string> unused_keys() const;

  // Canonical serialization, grouped by section.
  std::string echo() const;
  void write_file(const std::string& path) const;

 private:
  const std::string& raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
  std::string origin_ = "<memory>";
};

}  // namespace hemoflow::config
