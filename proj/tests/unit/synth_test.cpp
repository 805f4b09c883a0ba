#include <gtest/gtest.h>

#include "fcns/error.hpp"
#include "fcns/ingest.hpp"
#include "fcns/synth.hpp"
#include "test_support.hpp"

namespace fcns::synth {
namespace {

using testing::throws_kind;

double mean_where(const Image& img, const BlobGeometry& g, bool inside) {
  double sum = 0.0;
  int n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (g.contains(x + 0.5, y + 0.5) != inside) continue;
      sum += img.at(x, y);
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

TEST(BlobGeometry, ContainsUsesOuterEllipse) {
  BlobGeometry g{"ellipse", 50, 40, 20, 10, 0};
  EXPECT_TRUE(g.contains(50, 40));
  EXPECT_TRUE(g.contains(70, 40));
  EXPECT_FALSE(g.contains(50, 51));
  EXPECT_FALSE(BlobGeometry{}.contains(0, 0));
  const auto back = blob_from_json(to_json(g));
  EXPECT_EQ(back.shape, "ellipse");
  EXPECT_EQ(back.rx, 20.0);
}

TEST(Render, PatternIsBrighterThanBackground) {
  Rng rng(1);
  const auto style = sample_style(rng);
  for (auto label : {AnomalyLabel::kAnencephaly, AnomalyLabel::kHoloprosencephaly,
                     AnomalyLabel::kRachischisis}) {
    BlobGeometry g;
    const auto img = render(label, style, 128, rng, &g);
    ASSERT_TRUE(g.present());
    EXPECT_GT(mean_where(img, g, true), 2.0 * mean_where(img, g, false));
  }
  BlobGeometry none;
  render(AnomalyLabel::kNormal, style, 128, rng, &none);
  EXPECT_FALSE(none.present());
}

TEST(Render, RingHasDarkCentre) {
  Rng rng(2);
  const auto style = sample_style(rng);
  BlobGeometry g;
  const auto img = render(AnomalyLabel::kEncephalocele, style, 160, rng, &g);
  ASSERT_EQ(g.shape, "ring");
  BlobGeometry hole{"disk", g.cx, g.cy, g.inner - 2, g.inner - 2, 0};
  BlobGeometry band = g;
  double band_sum = 0.0, hole_sum = 0.0;
  int band_n = 0, hole_n = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (hole.contains(px, py)) {
        hole_sum += img.at(x, y);
        ++hole_n;
      } else if (band.contains(px, py) && std::hypot(px - g.cx, py - g.cy) > g.inner + 1) {
        band_sum += img.at(x, y);
        ++band_n;
      }
    }
  }
  EXPECT_GT(band_sum / band_n, 2.0 * hole_sum / hole_n);
}

TEST(GenerateCorpus, DeterministicAndRoundRobin) {
  testing::TempDir a, b, c;
  const SynthOptions opts{7, 3, 42, 96, a.path()};
  const auto m = generate_corpus(opts);
  auto same = opts;
  same.out_dir = b.path();
  generate_corpus(same);
  auto other = opts;
  other.out_dir = c.path();
  other.seed = 43;
  generate_corpus(other);

  ASSERT_EQ(m.records.size(), 21u);
  EXPECT_EQ(m.patient_count(), 7);
  EXPECT_EQ(m.label_counts.at(AnomalyLabel::kAnencephaly), 6);
  EXPECT_EQ(m.label_counts.at(AnomalyLabel::kNormal), 3);
  EXPECT_EQ(testing::read_text(a / "images/P003_i001.png"),
            testing::read_text(b / "images/P003_i001.png"));
  EXPECT_NE(testing::read_text(a / "images/P003_i001.png"),
            testing::read_text(c / "images/P003_i001.png"));

  const auto back = ingest::read_manifest(a / "manifest.jsonl");
  ASSERT_EQ(back.records.size(), 21u);
  for (const auto& r : back.records) {
    EXPECT_EQ(read_png(back.resolve(r)).width, 96);
    const auto g = blob_from_json(r.extra.at("blob"));
    EXPECT_EQ(g.present(), r.label != AnomalyLabel::kNormal);
    EXPECT_TRUE(r.gestational_age_days.has_value());
  }
}

TEST(GenerateCorpus, PatternsStayInsideCentreCrop) {
  testing::TempDir dir;
  const auto m = generate_corpus({10, 4, 5, 256, dir.path()});
  // The evaluation crop of a 256 image keeps [16, 240) on both axes.
  for (const auto& r : m.records) {
    const auto g = blob_from_json(r.extra.at("blob"));
    if (!g.present()) continue;
    EXPECT_GE(g.cx - g.rx, 16.0);
    EXPECT_LE(g.cx + g.rx, 240.0);
    EXPECT_GE(g.cy - g.ry, 16.0);
    EXPECT_LE(g.cy + g.ry, 240.0);
  }
}

TEST(GenerateCorpus, RejectsBadOptions) {
  testing::TempDir dir;
  EXPECT_TRUE(throws_kind([&] { generate_corpus({0, 3, 1, 96, dir.path()}); },
                          ErrorKind::kConfig));
  EXPECT_TRUE(throws_kind([&] { generate_corpus({2, 3, 1, 32, dir.path()}); },
                          ErrorKind::kConfig));
}

}  // namespace
}  // namespace fcns::synth
