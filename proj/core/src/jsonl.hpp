#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcns/error.hpp"

namespace fcns::detail {

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      raise(ErrorKind::kParse, path.string() + ":" + std::to_string(line_no) +
                                   ": " + e.what());
    }
  }
  return rows;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) raise(ErrorKind::kIo, "cannot write " + path.string());
}

inline void write_jsonl(const std::filesystem::path& path,
                        const std::vector<nlohmann::json>& rows) {
  std::string text;
  for (const auto& row : rows) {
    text += row.dump();
    text += '\n';
  }
  write_text(path, text);
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

}  // namespace fcns::detail
