#include "hemoflow/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace hemoflow::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::stringstream ss(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    cfg.values_[full] = value;
  }
  return cfg;
}

bool Config::has(const std::string& key) const {
  return values_.count(key) != 0;
}

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  used_[key] = true;
  return it->second;
}

std::string Config::get_string(const std::string& key) const {
  return raw(key);
}

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  if (!has(key)) return fallback;
  return raw(key);
}

double Config::get_double(const std::string& key) const {
  const std::string& s = raw(key);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + s +
                      "'");
  return v;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long Config::get_int(const std::string& key) const {
  const double v = get_double(key);
  const long n = static_cast<long>(v);
  if (static_cast<double>(n) != v)
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer");
  return n;
}

long Config::get_int(const std::string& key, long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key,
                              std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = raw(key);
  return std::stoull(s);
}

bool Config::get_bool(const std::string& key) const {
  const std::string& s = raw(key);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: '" + s +
                    "'");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  const std::string& s = raw(key);
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (cell.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0')
      throw ConfigError(origin_ + ": key '" + key + "' has a malformed list");
    out.push_back(v);
  }
  if (out.empty())
    throw ConfigError(origin_ + ": key '" + key + "' is an empty list");
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void Config::set_double(const std::string& key, double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  values_[key] = buf;
}

void Config::set_int(const std::string& key, long value) {
  values_[key] = std::to_string(value);
}

void Config::set_bool(const std::string& key, bool value) {
  values_[key] = value ? "true" : "false";
}

std::vector<std::string> Config::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!used_.count(k)) out.push_back(k);
  }
  return out;
}

std::string Config::echo() const {
  // std::map keeps keys sorted, so sections come out grouped.
  std::string out;
  std::string section;
  bool first = true;
  for (const auto& [k, v] : values_) {
    const auto dotpos = k.find('.');
    const std::string sec = dotpos == std::string::npos ? "" : k.substr(0, dotpos);
    const std::string name = dotpos == std::string::npos ? k : k.substr(dotpos + 1);
    if (sec != section || first) {
      if (!first) out += "\n";
      if (!sec.empty()) out += "[" + sec + "]\n";
      section = sec;
      first = false;
    }
    out += name + " = " + v + "\n";
  }
  return out;
}

void Config::write_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot open '" + path + "' for write");
  out << echo();
}

}  // namespace hemoflow::config
