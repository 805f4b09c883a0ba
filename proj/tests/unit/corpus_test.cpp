#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fcns/corpus.hpp"
#include "fcns/error.hpp"
#include "test_support.hpp"

namespace fcns::corpus {
namespace {

using ingest::Manifest;
using ingest::SampleRecord;
using testing::throws_kind;

Manifest manifest_with(int patients, int images_each = 2) {
  std::vector<SampleRecord> records;
  for (int p = 0; p < patients; ++p) {
    for (int i = 0; i < images_each; ++i) {
      SampleRecord r;
      r.patient_id = "P" + std::to_string(100 + p);
      r.sample_id = r.patient_id + "_" + std::to_string(i);
      records.push_back(r);
    }
  }
  return ingest::build_manifest(records);
}

TEST(Splits, LoocvOneFoldPerPatient) {
  const auto m = manifest_with(4);
  const auto plan = loocv_splits(m);
  ASSERT_EQ(plan.folds.size(), 4u);
  EXPECT_EQ(plan.k, 4);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(plan.folds[i].test_patient_ids, std::vector<std::string>{m.patients()[i]});
    EXPECT_EQ(plan.folds[i].train_patient_ids.size(), 3u);
  }
  EXPECT_TRUE(verify_no_leakage(plan, m).ok());
  EXPECT_TRUE(throws_kind([] { loocv_splits(manifest_with(1)); }, ErrorKind::kConfig));
}

TEST(Splits, KFoldBalancedAndSeeded) {
  const auto m = manifest_with(11);
  const auto plan = grouped_kfold(m, 3, 5);
  std::vector<std::size_t> sizes;
  for (const auto& f : plan.folds) sizes.push_back(f.test_patient_ids.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 3}));
  EXPECT_TRUE(verify_no_leakage(plan, m).ok());
  EXPECT_EQ(to_json(grouped_kfold(m, 3, 5)), to_json(plan));
  EXPECT_NE(to_json(grouped_kfold(m, 3, 6)), to_json(plan));
  EXPECT_TRUE(throws_kind([&] { grouped_kfold(m, 1, 0); }, ErrorKind::kConfig));
  EXPECT_TRUE(throws_kind([&] { grouped_kfold(m, 12, 0); }, ErrorKind::kConfig));
}

TEST(Splits, DeclaredPatientWithoutImages) {
  auto m = manifest_with(3);
  m.declared_patients = {"P100", "P999"};
  try {
    loocv_splits(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_EQ(e.details(), std::vector<std::string>{"P999"});
  }
}

TEST(Leakage, DetectsEachViolationKind) {
  using Kind = LeakageViolation::Kind;
  const auto m = manifest_with(3);
  auto plan = loocv_splits(m);

  auto overlap = plan;
  overlap.folds[0].train_patient_ids.push_back(overlap.folds[0].test_patient_ids[0]);
  const auto r1 = verify_no_leakage(overlap);
  ASSERT_EQ(r1.violations.size(), 1u);
  EXPECT_EQ(r1.violations[0], (LeakageViolation{Kind::kTrainTestOverlap, 0, "P100"}));

  auto twice = plan;
  twice.folds[1].test_patient_ids.push_back("P100");
  std::erase(twice.folds[1].train_patient_ids, "P100");
  const auto r2 = verify_no_leakage(twice);
  ASSERT_EQ(r2.violations.size(), 1u);
  EXPECT_EQ(r2.violations[0].kind, Kind::kTestedTwice);

  auto listed_twice = plan;
  listed_twice.folds[0].test_patient_ids.push_back("P100");
  const auto r_dup = verify_no_leakage(listed_twice);
  ASSERT_EQ(r_dup.violations.size(), 1u);
  EXPECT_EQ(r_dup.violations[0], (LeakageViolation{Kind::kTestedTwice, 0, "P100"}));

  auto untested = plan;
  untested.folds[2].test_patient_ids.clear();
  untested.folds[2].train_patient_ids.push_back("P102");
  const auto r3 = verify_no_leakage(untested);
  ASSERT_FALSE(r3.ok());
  EXPECT_EQ(r3.violations.back(), (LeakageViolation{Kind::kNotTested, -1, "P102"}));

  const auto bigger = manifest_with(4);
  const auto r4 = verify_no_leakage(plan, bigger);
  ASSERT_EQ(r4.violations.size(), 1u);
  EXPECT_EQ(r4.violations[0].kind, Kind::kUntrackedPatient);
  const auto r5 = verify_no_leakage(loocv_splits(bigger), m);
  ASSERT_EQ(r5.violations.size(), 1u);
  EXPECT_EQ(r5.violations[0].kind, Kind::kUnknownPatient);
}

TEST(Splits, JsonRoundTrip) {
  testing::TempDir dir;
  const auto plan = grouped_kfold(manifest_with(7), 3, 42);
  write_split_plan(dir / "split.json", plan);
  const auto back = read_split_plan(dir / "split.json");
  EXPECT_EQ(to_json(back), to_json(plan));
  EXPECT_EQ(back.fold(2).test_patient_ids, plan.folds[2].test_patient_ids);
  EXPECT_TRUE(throws_kind([&] { back.fold(9); }, ErrorKind::kConfig));
  EXPECT_TRUE(throws_kind([] { split_plan_from_json({{"scheme", "random"}}); },
                          ErrorKind::kParse));
}

TEST(Preprocess, ResizeShortSide) {
  PreprocessConfig c;
  EXPECT_EQ(c.resize_short_side(), 256);
  const auto wide = resize_short_side(Image(300, 200, 1), 256);
  EXPECT_EQ(wide.height, 256);
  EXPECT_EQ(wide.width, 384);
  // 333 * 100 / 301 = 110.63 -> 111
  const auto tall = resize_short_side(Image(301, 333, 3), 100);
  EXPECT_EQ(tall.width, 100);
  EXPECT_EQ(tall.height, 111);
  // 150 * 100 / 200 = 75 exactly; 5 * 3 / 2 = 7.5 -> 8 (half up)
  EXPECT_EQ(resize_short_side(Image(150, 200, 1), 100).height, 133);
  EXPECT_EQ(resize_short_side(Image(5, 2, 1), 3).width, 8);
}

TEST(Preprocess, NormalizeInverse) {
  PreprocessConfig c;
  for (int ch = 0; ch < 3; ++ch) {
    for (double px : {0.0, 17.0, 128.0, 255.0}) {
      EXPECT_NEAR(denormalize_value(normalize_value(px, ch, c), ch, c), px, 1e-9);
    }
  }
  EXPECT_NEAR(normalize_value(255.0, 0, c), (1.0 - 0.485) / 0.229, 1e-12);
}

Image ramp(int w, int h) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = static_cast<std::uint8_t>(x);
      img.at(x, y, 1) = static_cast<std::uint8_t>(y);
      img.at(x, y, 2) = 200;
    }
  }
  return img;
}

TEST(Preprocess, EvalTransformCentreCrop) {
  PreprocessConfig c;
  c.target_size = 8;
  c.val_resize_factor = 1.0;
  const auto img = ramp(12, 8);  // already at the short side: no resampling
  const auto out = eval_transform(img, c);
  EXPECT_EQ(out.channels, 3);
  EXPECT_EQ(out.height, 8);
  EXPECT_EQ(out.width, 8);
  EXPECT_EQ(center_crop_offset(8, 12, 8), std::make_pair(2, 0));
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      EXPECT_FLOAT_EQ(out.at(0, y, x), static_cast<float>(normalize_value(x + 2, 0, c)));
      EXPECT_FLOAT_EQ(out.at(1, y, x), static_cast<float>(normalize_value(y, 1, c)));
    }
  }
}

TEST(Preprocess, TrainTransformWindowAndFlip) {
  PreprocessConfig c;
  c.target_size = 4;
  c.val_resize_factor = 1.0;
  const auto img = ramp(10, 4);
  const auto out = train_transform(img, c, Augmentation{3, 0, true});
  for (int x = 0; x < 4; ++x) {
    EXPECT_FLOAT_EQ(out.at(0, 1, x), static_cast<float>(normalize_value(6 - x, 0, c)));
  }
  EXPECT_TRUE(throws_kind([&] { train_transform(img, c, Augmentation{7, 0, false}); },
                          ErrorKind::kPreprocess));
}

TEST(Preprocess, RandomAugmentationRanges) {
  PreprocessConfig c;
  c.target_size = 4;
  Rng rng(11);
  int flips = 0;
  std::set<int> xs;
  for (int i = 0; i < 2000; ++i) {
    const auto a = sample_augmentation(4, 9, c, rng);
    EXPECT_EQ(a.crop_y, 0);
    ASSERT_GE(a.crop_x, 0);
    ASSERT_LE(a.crop_x, 5);
    xs.insert(a.crop_x);
    flips += a.flip;
  }
  EXPECT_EQ(xs.size(), 6u);
  EXPECT_NEAR(flips / 2000.0, 0.5, 0.05);
  c.hflip_probability = 0.0;
  for (int i = 0; i < 100; ++i) EXPECT_FALSE(sample_augmentation(4, 4, c, rng).flip);
  EXPECT_TRUE(throws_kind([&] { sample_augmentation(3, 9, c, rng); }, ErrorKind::kPreprocess));
}

TEST(Preprocess, TrainTransformSeeded) {
  PreprocessConfig c;
  c.target_size = 32;
  const auto img = testing::gradient_image(50, 40, 1);
  Rng a(3);
  Rng b(3);
  EXPECT_EQ(train_transform(img, c, a).values, train_transform(img, c, b).values);
}

TEST(Preprocess, ConfigJson) {
  PreprocessConfig c;
  c.target_size = 64;
  c.hflip_probability = 0.25;
  const auto back = preprocess_config_from_json(to_json(c));
  EXPECT_EQ(back.target_size, 64);
  EXPECT_EQ(back.hflip_probability, 0.25);
  EXPECT_EQ(preprocess_config_from_json(nlohmann::json::object()).target_size, 224);
  EXPECT_TRUE(throws_kind([] { preprocess_config_from_json({{"hflip_probability", 2}}); },
                          ErrorKind::kConfig));
  EXPECT_TRUE(throws_kind([] { preprocess_config_from_json({{"std", {1, 0, 1}}}); },
                          ErrorKind::kConfig));
}

TEST(Preprocess, ToImageRoundsAndClamps) {
  Planar p(3, 1, 2);
  p.at(0, 0, 0) = 12.5f;
  p.at(1, 0, 0) = -3.0f;
  p.at(2, 0, 1) = 300.0f;
  const auto img = to_image(p);
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(img.at(0, 0, 0), 13);
  EXPECT_EQ(img.at(0, 0, 1), 0);
  EXPECT_EQ(img.at(1, 0, 2), 255);
}

}  // namespace
}  // namespace fcns::corpus
