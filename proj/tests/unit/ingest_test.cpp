#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fcns/error.hpp"
#include "fcns/ingest.hpp"
#include "test_support.hpp"

namespace fcns::ingest {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::throws_kind;

TEST(FrameIndices, InclusiveRange) {
  EXPECT_EQ(frame_indices({80, 0, 160}), (std::vector<int>{0, 80, 160}));
  EXPECT_EQ(frame_indices({80, 0, 159}), (std::vector<int>{0, 80}));
  EXPECT_EQ(frame_indices({3, 5, 5}), (std::vector<int>{5}));
  EXPECT_EQ(frame_indices({1, 2, 4}), (std::vector<int>{2, 3, 4}));
}

TEST(FrameIndices, MatchesBruteForce) {
  for (int stride = 1; stride <= 9; ++stride) {
    for (int start = 0; start <= 5; ++start) {
      for (int end = start; end <= 40; ++end) {
        std::vector<int> expected;
        for (int i = start; i <= end; ++i) {
          if ((i - start) % stride == 0) expected.push_back(i);
        }
        ASSERT_EQ(frame_indices({stride, start, end}), expected);
      }
    }
  }
}

TEST(FrameIndices, Rejects) {
  EXPECT_TRUE(throws_kind([] { frame_indices({0, 0, 10}); }, ErrorKind::kConfig));
  EXPECT_TRUE(throws_kind([] { frame_indices({1, 5, 4}); }, ErrorKind::kRange));
  EXPECT_TRUE(throws_kind([] { frame_indices({1, -1, 4}); }, ErrorKind::kRange));
}

TEST(ExtractFrames, PicksFrames) {
  std::vector<Image> video;
  for (int i = 0; i < 10; ++i) video.emplace_back(2, 2, 1, static_cast<std::uint8_t>(i));
  const auto frames = extract_frames(video, {4, 1, 9});
  ASSERT_EQ(frames.size(), 3u);
  EXPECT_EQ(frames[2].first, 9);
  EXPECT_EQ(frames[2].second.pixels[0], 9);
  EXPECT_TRUE(throws_kind([&] { extract_frames(video, {1, 0, 10}); }, ErrorKind::kRange));
  EXPECT_TRUE(throws_kind([] { extract_frames({}, {1, 0, 0}); }, ErrorKind::kEmptyInput));
}

TEST(CropRoi, CopiesWindow) {
  const auto img = testing::gradient_image(10, 8, 3);
  const auto out = crop_roi(img, {3, 2, 4, 5});
  EXPECT_EQ(out.width, 4);
  EXPECT_EQ(out.height, 5);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 4; ++x) {
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(x, y, c), img.at(x + 3, y + 2, c));
    }
  }
  EXPECT_EQ(crop_roi(img, {0, 0, 10, 8}), img);
  EXPECT_TRUE(throws_kind([&] { crop_roi(img, {7, 0, 4, 1}); }, ErrorKind::kRange));
  EXPECT_TRUE(throws_kind([&] { crop_roi(img, {0, 0, 0, 1}); }, ErrorKind::kRange));
}

TEST(GestationalAge, Parses) {
  EXPECT_EQ(parse_gestational_age("29w2d"), 205);
  EXPECT_EQ(parse_gestational_age("20w"), 140);
  EXPECT_EQ(parse_gestational_age(" 12W 6D "), 90);
  EXPECT_TRUE(throws_kind([] { parse_gestational_age("20w7d"); }, ErrorKind::kParse));
  EXPECT_TRUE(throws_kind([] { parse_gestational_age("twenty"); }, ErrorKind::kParse));
}

SampleRecord record(const std::string& id, const std::string& patient,
                    AnomalyLabel label = AnomalyLabel::kNormal) {
  SampleRecord r;
  r.sample_id = id;
  r.patient_id = patient;
  r.label = label;
  r.path = "images/" + id + ".png";
  return r;
}

TEST(Records, JsonRoundTripKeepsUnknownFields) {
  json j = {{"sample_id", "s1"},     {"patient_id", "p1"},
            {"path", "a.png"},       {"label", "Encephalocele"},
            {"plane", "CerebellarTransverse"},
            {"gestational_age_days", 150},
            {"source", "video_frame"}, {"video_id", "v1"},
            {"frame_index", 80},     {"site", "A"},
            {"scanner", {{"model", "X"}}}};
  const auto r = record_from_json(j);
  EXPECT_EQ(r.label, AnomalyLabel::kEncephalocele);
  EXPECT_EQ(r.frame_index, 80);
  EXPECT_EQ(r.extra["scanner"]["model"], "X");
  EXPECT_EQ(to_json(r), j);
}

TEST(Records, Rejects) {
  EXPECT_TRUE(throws_kind([] { record_from_json({{"patient_id", "p"}, {"label", "Normal"}}); },
                          ErrorKind::kValidation));
  EXPECT_TRUE(throws_kind(
      [] { record_from_json({{"sample_id", "s"}, {"patient_id", "p"}, {"label", "Cyst"}}); },
      ErrorKind::kLabel));
  EXPECT_TRUE(throws_kind(
      [] {
        record_from_json({{"sample_id", "s"}, {"patient_id", "p"}, {"label", "Normal"},
                          {"source", "scan"}});
      },
      ErrorKind::kValidation));
}

TEST(Manifest, CanonicalOrderAndCounts) {
  auto m = build_manifest({record("b", "p2", AnomalyLabel::kAnencephaly), record("a", "p1"),
                           record("c", "p1")});
  ASSERT_EQ(m.records.size(), 3u);
  EXPECT_EQ(m.records[0].sample_id, "a");
  EXPECT_EQ(m.patient_counts.at("p1"), 2);
  EXPECT_EQ(m.label_counts.at(AnomalyLabel::kNormal), 2);
  EXPECT_EQ(m.patients(), (std::vector<std::string>{"p1", "p2"}));
}

TEST(Manifest, ReportsAllProblemsTogether) {
  auto bad_frame = record("v", "p1");
  bad_frame.source = SampleSource::kVideoFrame;
  try {
    build_manifest({record("a", "p1"), record("a", "p2"), record("a", "p3"), bad_frame});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_EQ(e.details().size(), 2u);
  }
}

TEST(Manifest, FileRoundTrip) {
  testing::TempDir dir;
  auto m = build_manifest({record("x", "p1"), record("y", "p2", AnomalyLabel::kRachischisis)});
  write_manifest(dir / "manifest.jsonl", m);
  const auto back = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(to_json(back.records[1]), to_json(m.records[1]));
  EXPECT_EQ(back.base_dir, dir.path());
  EXPECT_EQ(back.resolve(back.records[0]), dir.path() / "images/x.png");
}

void write_lines(const fs::path& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  for (const auto& r : rows) out << r.dump() << '\n';
}

TEST(Ingest, VideosStillsAndCrops) {
  testing::TempDir dir;
  const auto root = dir / "in";
  for (int i = 0; i < 7; ++i) {
    write_png(frame_path(root, "vid1", i), Image(20, 10, 1, static_cast<std::uint8_t>(i * 10)));
  }
  EXPECT_EQ(count_frames(root, "vid1"), 7);
  EXPECT_EQ(frame_path(root, "vid1", 3), root / "frames/vid1/000003.png");
  write_png(root / "still.png", testing::gradient_image(12, 12, 3));
  write_lines(root / "videos.jsonl",
              {{{"video_id", "vid1"}, {"patient_id", "P1"}, {"label", "Anencephaly"},
                {"gestational_age", "21w3d"}, {"start_frame", 1}, {"end_frame", 6}}});
  write_lines(root / "stills.jsonl", {{{"sample_id", "S1"}, {"patient_id", "P2"},
                                       {"label", "Normal"}, {"path", "still.png"}}});
  write_lines(root / "crops.jsonl",
              {{{"sample_id", frame_sample_id("vid1", 4)}, {"x", 2}, {"y", 1},
                {"width", 8}, {"height", 5}}});

  IngestOptions opt;
  opt.videos_index = root / "videos.jsonl";
  opt.stills_index = root / "stills.jsonl";
  opt.crops = root / "crops.jsonl";
  opt.stride = 3;
  opt.out_dir = dir / "out";
  const auto summary = ingest_corpus(opt);
  EXPECT_EQ(summary.video_frames, 2);  // frames 1 and 4
  EXPECT_EQ(summary.stills, 1);
  EXPECT_EQ(summary.cropped, 1);

  const auto m = read_manifest(dir / "out/manifest.jsonl");
  ASSERT_EQ(m.records.size(), 3u);
  const auto& f4 = m.records[0].sample_id == "S1" ? m.records[2] : m.records[1];
  EXPECT_EQ(f4.sample_id, "vid1_f000004");
  EXPECT_EQ(f4.frame_index, 4);
  EXPECT_EQ(f4.gestational_age_days, 150);
  EXPECT_EQ(f4.source, SampleSource::kVideoFrame);
  const auto cropped = read_png(m.resolve(f4));
  EXPECT_EQ(cropped.width, 8);
  EXPECT_EQ(cropped.pixels[0], 40);
}

TEST(Ingest, EndFrameBeyondVideo) {
  testing::TempDir dir;
  write_png(frame_path(dir.path(), "v", 0), Image(4, 4, 1));
  write_lines(dir / "videos.jsonl",
              {{{"video_id", "v"}, {"patient_id", "P"}, {"label", "Normal"}, {"end_frame", 3}}});
  IngestOptions opt;
  opt.videos_index = dir / "videos.jsonl";
  opt.out_dir = dir / "out";
  EXPECT_TRUE(throws_kind([&] { ingest_corpus(opt); }, ErrorKind::kRange));
  EXPECT_TRUE(throws_kind([] { ingest_corpus({}); }, ErrorKind::kConfig));
}

TEST(Ingest, DecodeVideoWithExternalDecoder) {
  testing::TempDir dir;
  write_png(dir / "frame.png", Image(4, 4, 1, 9));
  // Stand-in decoder: copies one PNG to the first three names of the output
  // pattern (last argument).
  const auto script = dir / "fake-decoder";
  {
    std::ofstream out(script);
    out << "#!/bin/sh\nfor last; do :; done\n"
        << "for i in 0 1 2; do cp '" << (dir / "frame.png").string()
        << "' \"$(printf \"$last\" $i)\"; done\n";
  }
  fs::permissions(script, fs::perms::owner_all);
  std::ofstream(dir / "clip.mp4") << "x";
  EXPECT_EQ(decode_video(dir / "clip.mp4", dir / "root", "clip", script.string()), 3);
  EXPECT_EQ(read_png(frame_path(dir / "root", "clip", 2)).pixels[0], 9);
  EXPECT_TRUE(throws_kind([&] { decode_video(dir / "none.mp4", dir.path(), "n"); },
                          ErrorKind::kIo));
  EXPECT_TRUE(throws_kind([&] { decode_video(dir / "clip.mp4", dir.path(), "c", "false"); },
                          ErrorKind::kIo));
}

}  // namespace
}  // namespace fcns::ingest
