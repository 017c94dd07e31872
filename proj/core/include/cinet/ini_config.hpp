#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace cinet {

// Minimal INI reader: `key = value` lines, optional `[section]` headers that
// prefix following keys as "section.key", full-line comments starting with
// '#' or ';'. Values keep internal spaces; surrounding whitespace is trimmed.
// Typed getters fail with the key and the offending text. set() lets callers
// overlay values (CLI flags beat config files).
class IniConfig {
 public:
  IniConfig() = default;

  static IniConfig parse_file(const std::string& path);
  static IniConfig parse_string(const std::string& text, const std::string& name = "<string>");

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace cinet
