#pragma once

// Run configuration (TOML in, JSON mirror) and reproducible run manifests.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ahm {

// Parses a small TOML subset: [section] tables, key = value with integers,
// floats, booleans, quoted strings and flat arrays, and # comments.
// Files ending in .json are parsed as the JSON mirror of the same layout.
nlohmann::json parse_config_text(const std::string& text);
nlohmann::json load_config_file(const std::string& path);

// FNV-1a over the canonical JSON dump; embedded in every output file.
std::uint64_t config_hash(const nlohmann::json& config);
std::string config_hash_hex(const nlohmann::json& config);

struct CheckResult {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct RunManifest {
  std::string subcommand;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<CheckResult> checks;
  double wall_time_seconds = 0.0;
  int schema_version = 1;

  bool all_pass() const;
  nlohmann::json to_json() const;
};

void write_text_file(const std::string& path, const std::string& text);

}  // namespace ahm
