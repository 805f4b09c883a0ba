#include <chrono>
#include <csignal>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "fcns/corpus.hpp"
#include "fcns/ingest.hpp"
#include "fcns/metrics.hpp"
#include "fcns/net.hpp"
#include "fcns/run_manifest.hpp"
#include "test_support.hpp"

namespace fcns::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run fcns(std::vector<std::string> args) {
  args.insert(args.begin(), "fcns");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json read_json(const fs::path& p) { return json::parse(testing::read_text(p)); }

TEST(Cli, UsageErrors) {
  EXPECT_EQ(fcns({}).code, kExitUsage);
  EXPECT_EQ(fcns({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(fcns({"split", "--scheme", "loocv"}).code, kExitUsage);
  EXPECT_EQ(fcns({"evaluate", "--predictions", "p", "--task", "7class"}).code, kExitUsage);
  const auto v = fcns({"--version"});
  EXPECT_EQ(v.code, kExitOk);
  EXPECT_EQ(v.out, std::string(kToolVersion) + "\n");
  EXPECT_NE(fcns({"--help"}).out.find("synth"), std::string::npos);
}

TEST(Cli, FailuresReportKind) {
  testing::TempDir dir;
  const auto r = fcns({"evaluate", "--predictions", (dir / "missing.jsonl").string()});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("error ("), std::string::npos);
  EXPECT_EQ(fcns({"ingest", "--out", (dir / "o").string()}).code, kExitFailure);
}

TEST(Cli, IngestStills) {
  testing::TempDir dir;
  write_png(dir / "a.png", testing::gradient_image(30, 20, 1));
  std::ofstream(dir / "stills.jsonl")
      << json{{"sample_id", "S1"}, {"patient_id", "P1"}, {"label", "Normal"}, {"path", "a.png"}}
             .dump()
      << "\n";
  const auto r = fcns({"ingest", "--stills", (dir / "stills.jsonl").string(), "--out",
                       (dir / "out").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(ingest::read_manifest(dir / "out/manifest.jsonl").records.size(), 1u);
  EXPECT_EQ(read_json(dir / "out/run_manifest.json").at("command"), "ingest");
}

TEST(Cli, EvaluateFixture) {
  testing::TempDir dir;
  const auto report = dir / "r/report.json";
  const auto r = fcns({"evaluate", "--predictions",
                       (testing::data_dir() / "confusion36.jsonl").string(), "--task",
                       "4class", "--report", report.string(), "--welch"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = read_json(report);
  EXPECT_EQ(j.at("patient_level").at("confusion"),
            json::parse("[[3,1,0,0],[0,8,0,0],[0,0,15,0],[0,0,1,8]]"));
  EXPECT_EQ(j.at("subgroup").at("test_name"), "welch_t");
  const auto run = read_json(report.string() + ".run.json");
  EXPECT_EQ(run.at("input_hashes").size(), 1u);
}

TEST(Cli, SynthSplitTrainExplainPredict) {
  testing::TempDir dir;
  const auto data = dir / "synth";
  ASSERT_EQ(fcns({"synth", "--patients", "10", "--images-per-patient", "2", "--image-size",
                  "64", "--seed", "3", "--out", data.string()})
                .code,
            kExitOk);
  const auto manifest = (data / "manifest.jsonl").string();
  const auto split = (dir / "split.json").string();
  ASSERT_EQ(fcns({"split", "--manifest", manifest, "--out", split}).code, kExitOk);
  EXPECT_EQ(corpus::read_split_plan(split).folds.size(), 10u);

  EXPECT_EQ(fcns({"split", "--manifest", manifest, "--scheme", "kfold", "--k", "5", "--out",
                  (dir / "k.json").string()})
                .code,
            kExitOk);

  std::ofstream(dir / "train.json") << R"({"preprocess": {"target_size": 32}})";
  const auto out = dir / "train";
  const auto t = fcns({"train", "--manifest", manifest, "--split", split, "--fold", "0",
                       "--train-config", (dir / "train.json").string(), "--max-epochs", "2",
                       "--batch-size", "4", "--out", out.string()});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  EXPECT_TRUE(fs::exists(out / "fold_0/best.ckpt"));
  EXPECT_EQ(metrics::read_predictions(out / "predictions.jsonl").size(), 2u);
  EXPECT_EQ(read_json(out / "train_config.json").at("max_epochs"), 2);
  EXPECT_EQ(read_json(out / "run_manifest.json").at("command"), "train");

  EXPECT_EQ(fcns({"train", "--manifest", manifest, "--split", split, "--task", "4class",
                  "--profile", "tiny", "--out", out.string()})
                .code,
            kExitFailure);

  const auto image = (data / "images/P000_i000.png").string();
  const auto e = fcns({"explain", "--checkpoint", (out / "fold_0/best.ckpt").string(),
                       "--image", image, "--class", "Normal", "--out", (dir / "x").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_TRUE(fs::exists(dir / "x/P000_i000.overlay.png"));
  EXPECT_EQ(read_json(dir / "x/P000_i000.explain.json").at("class_index"), 4);
  EXPECT_EQ(fcns({"explain", "--checkpoint", (out / "fold_0/best.ckpt").string(), "--image",
                  image, "--class", "Cyst", "--out", (dir / "x").string()})
                .code,
            kExitFailure);

  const auto p = fcns({"predict", "--train-dir", out.string(), "--image", image, "--out",
                       (dir / "pred.json").string()});
  ASSERT_EQ(p.code, kExitOk) << p.err;
  const auto pred = read_json(dir / "pred.json");
  EXPECT_EQ(pred.at("models"), 1);
  EXPECT_EQ(pred.at("probabilities").size(), 5u);
}

#ifdef FCNS_BINARY
TEST(Cli, ServeStopsOnSigterm) {
  testing::TempDir dir;
  const auto cases = testing::write_reader_fixture(dir / "cases");
  const auto log = dir / "serve.log";
  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    ::dup2(fd, 2);
    ::execl(FCNS_BINARY, "fcns", "serve", "--port", "0", "--cases", cases.c_str(),
            "--data-dir", (dir / "data").c_str(), "--readers", "alice,bob", "--admin-token",
            "t0k", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  int port = 0;
  const std::regex re(R"(on http://127\.0\.0\.1:(\d+))");
  for (int i = 0; i < 200 && port == 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    std::smatch m;
    const auto text = fs::exists(log) ? testing::read_text(log) : std::string();
    if (std::regex_search(text, m, re)) port = std::stoi(m[1]);
  }
  ASSERT_GT(port, 0);
  EXPECT_EQ(testing::http_request(port, "GET", "/api/cases/next?reader=bob").status, 200);
  const auto summary =
      testing::http_request(port, "GET", "/api/summary", {}, {"Authorization: Bearer t0k"});
  EXPECT_EQ(json::parse(summary.body).at("readers").size(), 2u);
  ::kill(pid, SIGTERM);
  int status = 0;
  ::waitpid(pid, &status, 0);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_FALSE(read_json(dir / "data/run_manifest.json").at("finished_at").get<std::string>().empty());
}
#endif

}  // namespace
}  // namespace fcns::cli
