#include <fstream>
#include <regex>

#include <gtest/gtest.h>

#include "fcns/run_manifest.hpp"
#include "test_support.hpp"

namespace fcns {
namespace {

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(std::string(1000000, 'a')),
            "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST(Sha256, FileMatchesBytes) {
  testing::TempDir dir;
  std::string bytes("a\0b\xff", 4);
  std::ofstream(dir / "f.bin", std::ios::binary) << bytes;
  EXPECT_EQ(sha256_file(dir / "f.bin"), sha256_hex(bytes));
}

TEST(UtcTimestamp, Format) {
  EXPECT_TRUE(std::regex_match(utc_timestamp(),
                               std::regex(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{3}Z)")));
}

TEST(RunManifest, DirectoryInputsAndRoundTrip) {
  testing::TempDir dir;
  std::filesystem::create_directories(dir / "in/sub");
  std::ofstream(dir / "in/b.txt") << "b";
  std::ofstream(dir / "in/sub/a.txt") << "a";
  RunManifest m;
  m.command = "train";
  m.seed = 17;
  m.config = {{"lr", 5e-4}};
  m.add_input(dir / "in");
  ASSERT_EQ(m.input_hashes.size(), 2u);
  EXPECT_EQ(m.input_hashes.at((dir / "in/sub/a.txt").generic_string()), sha256_hex("a"));

  write_run_manifest(dir / "out/run.json", m);
  const auto back = run_manifest_from_json(
      nlohmann::json::parse(testing::read_text(dir / "out/run.json")));
  EXPECT_EQ(back.command, "train");
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.input_hashes, m.input_hashes);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.tool_version, kToolVersion);
}

}  // namespace
}  // namespace fcns
