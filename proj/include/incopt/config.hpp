#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "incopt/tsv.hpp"

namespace incopt {

// key=value config files, '#' comments. The same syntax CLI11 accepts via
// --config, so reference configs are shared between the CLI and the tests.
inline std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return s;
    };
    std::string_view t = trim(line);
    if (t.empty() || t.front() == '#' || t.front() == ';') return;
    const std::size_t eq = t.find('=');
    if (eq == std::string_view::npos) {
      raise(ErrorKind::ParseError,
            path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    std::string key(trim(t.substr(0, eq)));
    std::string value(trim(t.substr(eq + 1)));
    out[key] = value;
  });
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Order-independent hash of a resolved configuration (map keys are sorted).
inline std::string config_hash(const std::map<std::string, std::string>& cfg) {
  std::string canon;
  for (const auto& [k, v] : cfg) {
    canon += k;
    canon += '=';
    canon += v;
    canon += '\n';
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
  return std::string(buf);
}

}  // namespace incopt
