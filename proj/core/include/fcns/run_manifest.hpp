#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fcns {

inline constexpr const char* kToolVersion = "0.3.0";

/// Lower-case hex SHA-256 of a byte string / file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Current UTC time as YYYY-MM-DDTHH:MM:SS.mmmZ.
std::string utc_timestamp();

// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;  // path -> sha256
  std::string tool_version = kToolVersion;
  std::string started_at;
  std::string finished_at;

  /// Hashes a file, or every regular file below a directory in sorted
  /// order (keys are then relative paths joined to the directory).
  void add_input(const std::filesystem::path& path);
};

nlohmann::json to_json(const RunManifest& manifest);
RunManifest run_manifest_from_json(const nlohmann::json& j);
void write_run_manifest(const std::filesystem::path& path,
                        const RunManifest& manifest);

}  // namespace fcns
