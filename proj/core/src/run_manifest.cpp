#include "fcns/run_manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>

#include "fcns/error.hpp"
#include "jsonl.hpp"

namespace fcns {

namespace fs = std::filesystem;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      raise(ErrorKind::kIo, "SHA-256 unavailable");
    }
  }
  void update(const void* data, std::size_t size) {
    EVP_DigestUpdate(ctx_.get(), data, size);
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest.data(), &len);
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", digest[i]);
      out += buf;
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::kIo, "cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms.count()));
  return buf;
}

void RunManifest::add_input(const fs::path& path) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) input_hashes[f.generic_string()] = sha256_file(f);
    return;
  }
  input_hashes[path.generic_string()] = sha256_file(path);
}

nlohmann::json to_json(const RunManifest& m) {
  return nlohmann::json{{"command", m.command},
                        {"config", m.config},
                        {"seed", m.seed},
                        {"input_hashes", m.input_hashes},
                        {"tool_version", m.tool_version},
                        {"started_at", m.started_at},
                        {"finished_at", m.finished_at}};
}

RunManifest run_manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.value("config", nlohmann::json::object());
    m.seed = j.value("seed", std::uint64_t{0});
    m.input_hashes =
        j.value("input_hashes", std::map<std::string, std::string>{});
    m.tool_version = j.value("tool_version", std::string(kToolVersion));
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::kParse, std::string("run manifest: ") + e.what());
  }
  return m;
}

void write_run_manifest(const fs::path& path, const RunManifest& manifest) {
  detail::write_json(path, to_json(manifest));
}

}  // namespace fcns
