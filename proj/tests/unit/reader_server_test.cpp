#include <thread>

#include <gtest/gtest.h>

#include "fcns/reader_server.hpp"
#include "test_support.hpp"

namespace fcns::reader {
namespace {

using nlohmann::json;
using testing::http_request;

const std::vector<std::string> kAdmin{"Authorization: Bearer s3cret"};

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    study_ = std::make_unique<ReaderStudy>(
        read_cases(testing::write_reader_fixture(dir_ / "cases")), dir_ / "data");
    server_ = std::make_unique<ReaderServer>(*study_, "s3cret");
    port_ = server_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { server_->serve(); });
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  testing::HttpReply get(const std::string& target,
                         const std::vector<std::string>& headers = {}) {
    return http_request(port_, "GET", target, {}, headers);
  }
  testing::HttpReply post(const std::string& target, const std::string& body,
                          const std::vector<std::string>& headers = {}) {
    return http_request(port_, "POST", target, body, headers);
  }
  void add_reader(const std::string& id) {
    ASSERT_EQ(post("/api/readers", json{{"reader_id", id}}.dump(), kAdmin).status, 201);
  }

  testing::TempDir dir_;
  std::unique_ptr<ReaderStudy> study_;
  std::unique_ptr<ReaderServer> server_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(ServerTest, Health) {
  const auto r = get("/api/health");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body).at("status"), "ok");
  EXPECT_EQ(r.headers.at("content-type"), "application/json");
}

TEST_F(ServerTest, AdminRoutesNeedToken) {
  EXPECT_EQ(get("/api/summary").status, 401);
  EXPECT_EQ(get("/api/summary", {"Authorization: Bearer wrong"}).status, 401);
  EXPECT_EQ(post("/api/readers", R"({"reader_id":"a"})").status, 401);
  EXPECT_EQ(get("/api/summary", kAdmin).status, 200);
  EXPECT_EQ(post("/api/readers", R"({"reader_id":"a"})", kAdmin).status, 201);
  EXPECT_EQ(post("/api/readers", R"({"reader_id":"a"})", kAdmin).status, 200);
  EXPECT_EQ(post("/api/readers", R"({"id":"a"})", kAdmin).status, 422);
}

TEST_F(ServerTest, NextCaseStatuses) {
  EXPECT_EQ(get("/api/cases/next").status, 400);
  EXPECT_EQ(get("/api/cases/next?reader=ghost").status, 404);
  add_reader("alice");
  EXPECT_EQ(get("/api/cases/next?reader=alice&mode=sideways").status, 400);
  const auto blind = get("/api/cases/next?reader=alice");
  ASSERT_EQ(blind.status, 200);
  const auto j = json::parse(blind.body);
  EXPECT_EQ(j.at("remaining"), 10);
  EXPECT_EQ(j.at("case_id"), study_->case_order("alice").front());
  for (const auto& key : {"model_probabilities", "overlay_url", "true_label"}) {
    EXPECT_FALSE(j.contains(key)) << key;
  }
  const auto assisted = json::parse(get("/api/cases/next?reader=alice&mode=assisted").body);
  EXPECT_EQ(assisted.at("model_probabilities").size(), 5u);
}

TEST_F(ServerTest, ResponseStatuses) {
  add_reader("alice");
  const std::string ok = R"({"reader_id":"alice","chosen_label":"Normal","elapsed_ms":900})";
  EXPECT_EQ(post("/api/cases/C01/responses", ok).status, 201);
  const auto log = testing::read_text(dir_ / "data/responses.jsonl");
  const auto dup = post("/api/cases/C01/responses", ok);
  EXPECT_EQ(dup.status, 409);
  EXPECT_TRUE(json::parse(dup.body).contains("error"));
  EXPECT_EQ(testing::read_text(dir_ / "data/responses.jsonl"), log);
  EXPECT_EQ(post("/api/cases/C77/responses", ok).status, 404);
  EXPECT_EQ(post("/api/cases/C02/responses",
                 R"({"reader_id":"bob","chosen_label":"Normal"})").status,
            404);
  EXPECT_EQ(post("/api/cases/C02/responses", "{not json").status, 400);
  const auto bad_label =
      post("/api/cases/C02/responses", R"({"reader_id":"alice","chosen_label":"Cyst"})");
  EXPECT_EQ(bad_label.status, 422);
  EXPECT_EQ(post("/api/cases/C02/responses",
                 R"({"reader_id":"alice","chosen_label":"Normal","mode":"x"})").status,
            422);
  EXPECT_EQ(study_->responses().size(), 1u);
}

TEST_F(ServerTest, ImagesAndOverlays) {
  const auto img = get("/api/cases/C01/image");
  EXPECT_EQ(img.status, 200);
  EXPECT_EQ(img.headers.at("content-type"), "image/png");
  EXPECT_EQ(img.body, testing::read_text(dir_ / "cases/img/C01.png"));
  EXPECT_EQ(get("/api/cases/C01/overlay").status, 404);
  EXPECT_EQ(get("/api/cases/C02/overlay").status, 200);
  EXPECT_EQ(get("/api/cases/C99/image").status, 404);
}

TEST_F(ServerTest, FullSessionSummary) {
  add_reader("alice");
  // alice always answers Anencephaly; the two Anencephaly cases are her only hits.
  int answered = 0;
  for (;;) {
    const auto next = get("/api/cases/next?reader=alice");
    if (next.status == 204) break;
    ASSERT_EQ(next.status, 200);
    const auto id = json::parse(next.body).at("case_id").get<std::string>();
    ASSERT_EQ(post("/api/cases/" + id + "/responses",
                   R"({"reader_id":"alice","chosen_label":"Anencephaly"})")
                  .status,
              201);
    ++answered;
  }
  EXPECT_EQ(answered, 10);
  const auto s = json::parse(get("/api/summary", kAdmin).body);
  EXPECT_EQ(s.at("responses"), 10);
  const auto& pc = s.at("readers")[0].at("per_class");
  EXPECT_EQ(pc.at("Anencephaly").at("rate"), 1.0);
  EXPECT_EQ(pc.at("Normal").at("rate"), 0.0);
  EXPECT_EQ(pc.at("Normal").at("total"), 2);
  EXPECT_EQ(s.at("model").at("per_class").at("Holoprosencephaly").at("rate"), 1.0);
}

TEST_F(ServerTest, CorsPreflight) {
  const auto r = http_request(port_, "OPTIONS", "/api/summary");
  EXPECT_EQ(r.status, 204);
  EXPECT_EQ(r.headers.at("access-control-allow-origin"), "*");
}

}  // namespace
}  // namespace fcns::reader
