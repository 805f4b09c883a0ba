#include "fcns/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fcns/error.hpp"
#include "jsonl.hpp"

namespace fcns::corpus {

using nlohmann::json;

const Fold& SplitPlan::fold(int fold_id) const {
  for (const auto& f : folds) {
    if (f.fold_id == fold_id) return f;
  }
  raise(ErrorKind::kConfig, "split plan has no fold " + std::to_string(fold_id));
}

namespace {

std::vector<std::string> checked_patients(const ingest::Manifest& manifest,
                                          int minimum) {
  std::vector<std::string> empty;
  for (const auto& id : manifest.declared_patients) {
    if (!manifest.patient_counts.contains(id)) empty.push_back(id);
  }
  if (!empty.empty()) {
    raise(ErrorKind::kValidation,
          "patient " + empty.front() + " has no images", empty);
  }
  auto patients = manifest.patients();
  if (static_cast<int>(patients.size()) < minimum) {
    raise(ErrorKind::kConfig, "need at least " + std::to_string(minimum) +
                                  " patients, manifest has " +
                                  std::to_string(patients.size()));
  }
  return patients;
}

Fold make_fold(int fold_id, const std::vector<std::string>& patients,
               const std::set<std::string>& test) {
  Fold fold;
  fold.fold_id = fold_id;
  for (const auto& p : patients) {
    (test.contains(p) ? fold.test_patient_ids : fold.train_patient_ids)
        .push_back(p);
  }
  return fold;
}

}  // namespace

SplitPlan loocv_splits(const ingest::Manifest& manifest) {
  const auto patients = checked_patients(manifest, 2);
  SplitPlan plan;
  plan.scheme = SplitScheme::kLoocv;
  plan.k = static_cast<int>(patients.size());
  for (int i = 0; i < plan.k; ++i) {
    plan.folds.push_back(make_fold(i, patients, {patients[i]}));
  }
  return plan;
}

SplitPlan grouped_kfold(const ingest::Manifest& manifest, int k,
                        std::uint64_t seed) {
  if (k < 2) raise(ErrorKind::kConfig, "k must be >= 2");
  const auto patients = checked_patients(manifest, k);
  auto order = patients;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  const int n = static_cast<int>(order.size());
  SplitPlan plan;
  plan.scheme = SplitScheme::kGroupedKFold;
  plan.k = k;
  plan.seed = seed;
  int cursor = 0;
  for (int f = 0; f < k; ++f) {
    const int size = n / k + (f < n % k ? 1 : 0);
    std::set<std::string> test(order.begin() + cursor,
                               order.begin() + cursor + size);
    cursor += size;
    plan.folds.push_back(make_fold(f, patients, test));
  }
  return plan;
}

std::string_view to_string(LeakageViolation::Kind kind) {
  switch (kind) {
    case LeakageViolation::Kind::kTrainTestOverlap: return "train_test_overlap";
    case LeakageViolation::Kind::kNotTested: return "not_tested";
    case LeakageViolation::Kind::kTestedTwice: return "tested_twice";
    case LeakageViolation::Kind::kUnknownPatient: return "unknown_patient";
    case LeakageViolation::Kind::kUntrackedPatient: return "untracked_patient";
  }
  return "";
}

LeakageReport verify_no_leakage(const SplitPlan& plan) {
  using Kind = LeakageViolation::Kind;
  LeakageReport report;
  std::set<std::string> universe;
  std::map<std::string, int> test_count;
  for (const auto& fold : plan.folds) {
    std::set<std::string> train(fold.train_patient_ids.begin(),
                                fold.train_patient_ids.end());
    universe.insert(train.begin(), train.end());
    std::set<std::string> seen_test;
    for (const auto& p : fold.test_patient_ids) {
      universe.insert(p);
      if (!seen_test.insert(p).second) {
        report.violations.push_back({Kind::kTestedTwice, fold.fold_id, p});
        continue;
      }
      ++test_count[p];
      if (train.contains(p)) {
        report.violations.push_back({Kind::kTrainTestOverlap, fold.fold_id, p});
      }
    }
  }
  for (const auto& p : universe) {
    const int count = test_count.contains(p) ? test_count[p] : 0;
    if (count == 0) report.violations.push_back({Kind::kNotTested, -1, p});
    if (count > 1) report.violations.push_back({Kind::kTestedTwice, -1, p});
  }
  return report;
}

LeakageReport verify_no_leakage(const SplitPlan& plan,
                                const ingest::Manifest& manifest) {
  using Kind = LeakageViolation::Kind;
  LeakageReport report = verify_no_leakage(plan);
  std::set<std::string> in_plan;
  for (const auto& fold : plan.folds) {
    in_plan.insert(fold.train_patient_ids.begin(), fold.train_patient_ids.end());
    in_plan.insert(fold.test_patient_ids.begin(), fold.test_patient_ids.end());
  }
  for (const auto& p : in_plan) {
    if (!manifest.patient_counts.contains(p)) {
      report.violations.push_back({Kind::kUnknownPatient, -1, p});
    }
  }
  for (const auto& [p, count] : manifest.patient_counts) {
    if (!in_plan.contains(p)) {
      report.violations.push_back({Kind::kUntrackedPatient, -1, p});
    }
  }
  return report;
}

json to_json(const SplitPlan& plan) {
  json folds = json::array();
  for (const auto& f : plan.folds) {
    folds.push_back({{"fold_id", f.fold_id},
                     {"train", f.train_patient_ids},
                     {"test", f.test_patient_ids}});
  }
  return {{"scheme", plan.scheme == SplitScheme::kLoocv ? "loocv" : "kfold"},
          {"k", plan.k},
          {"seed", plan.seed},
          {"folds", folds}};
}

SplitPlan split_plan_from_json(const json& j) {
  try {
    SplitPlan plan;
    const auto scheme = j.at("scheme").get<std::string>();
    if (scheme == "loocv") {
      plan.scheme = SplitScheme::kLoocv;
    } else if (scheme == "kfold") {
      plan.scheme = SplitScheme::kGroupedKFold;
    } else {
      raise(ErrorKind::kParse, "unknown split scheme '" + scheme + "'");
    }
    plan.k = j.value("k", 0);
    plan.seed = j.value("seed", std::uint64_t{0});
    for (const auto& f : j.at("folds")) {
      plan.folds.push_back({f.at("fold_id").get<int>(),
                            f.at("train").get<std::vector<std::string>>(),
                            f.at("test").get<std::vector<std::string>>()});
    }
    return plan;
  } catch (const json::exception& e) {
    raise(ErrorKind::kParse, std::string("split plan: ") + e.what());
  }
}

void write_split_plan(const std::filesystem::path& path, const SplitPlan& plan) {
  detail::write_json(path, to_json(plan));
}

SplitPlan read_split_plan(const std::filesystem::path& path) {
  return split_plan_from_json(detail::read_json(path));
}

int PreprocessConfig::resize_short_side() const {
  return static_cast<int>(std::floor(target_size * val_resize_factor + 0.5));
}

void PreprocessConfig::validate() const {
  if (target_size < 1) raise(ErrorKind::kConfig, "target_size must be >= 1");
  for (double s : std) {
    if (!(s > 0.0)) raise(ErrorKind::kConfig, "std components must be > 0");
  }
  if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0)) {
    raise(ErrorKind::kConfig, "hflip_probability must lie in [0, 1]");
  }
  if (!(val_resize_factor > 0.0)) {
    raise(ErrorKind::kConfig, "val_resize_factor must be > 0");
  }
}

json to_json(const PreprocessConfig& c) {
  return {{"target_size", c.target_size},
          {"val_resize_factor", c.val_resize_factor},
          {"mean", c.mean},
          {"std", c.std},
          {"hflip_probability", c.hflip_probability}};
}

PreprocessConfig preprocess_config_from_json(const json& j) {
  PreprocessConfig c;
  try {
    c.target_size = j.value("target_size", c.target_size);
    c.val_resize_factor = j.value("val_resize_factor", c.val_resize_factor);
    if (j.contains("mean")) c.mean = j["mean"].get<std::array<double, 3>>();
    if (j.contains("std")) c.std = j["std"].get<std::array<double, 3>>();
    c.hflip_probability = j.value("hflip_probability", c.hflip_probability);
  } catch (const json::exception& e) {
    raise(ErrorKind::kParse, std::string("preprocess config: ") + e.what());
  }
  c.validate();
  return c;
}

Planar resize_short_side(const Image& image, int short_side) {
  if (image.width < 1 || image.height < 1) {
    raise(ErrorKind::kPreprocess, "empty image");
  }
  const Planar src = to_planar(to_rgb(image));
  const long long h = image.height;
  const long long w = image.width;
  int out_h = short_side;
  int out_w = short_side;
  // Long side: round-half-up(long * short_side / short), in integers.
  if (h <= w) {
    out_w = static_cast<int>((2 * w * short_side + h) / (2 * h));
  } else {
    out_h = static_cast<int>((2 * h * short_side + w) / (2 * w));
  }
  return resize_bilinear(src, out_h, out_w);
}

Augmentation sample_augmentation(int resized_height, int resized_width,
                                 const PreprocessConfig& config, Rng& rng) {
  const int t = config.target_size;
  if (resized_height < t || resized_width < t) {
    raise(ErrorKind::kPreprocess, "image smaller than the crop target");
  }
  Augmentation a;
  a.crop_y = static_cast<int>(rng.below(resized_height - t + 1));
  a.crop_x = static_cast<int>(rng.below(resized_width - t + 1));
  a.flip = rng.uniform() < config.hflip_probability;
  return a;
}

double normalize_value(double pixel, int channel, const PreprocessConfig& c) {
  return (pixel / 255.0 - c.mean[channel]) / c.std[channel];
}

double denormalize_value(double value, int channel, const PreprocessConfig& c) {
  return (value * c.std[channel] + c.mean[channel]) * 255.0;
}

void normalize_in_place(Planar& planar, const PreprocessConfig& config) {
  for (int c = 0; c < planar.channels; ++c) {
    float* p = planar.values.data() + c * planar.plane_size();
    for (std::size_t i = 0; i < planar.plane_size(); ++i) {
      p[i] = static_cast<float>(normalize_value(p[i], c, config));
    }
  }
}

Planar denormalize(const Planar& planar, const PreprocessConfig& config) {
  Planar out = planar;
  for (int c = 0; c < out.channels; ++c) {
    float* p = out.values.data() + c * out.plane_size();
    for (std::size_t i = 0; i < out.plane_size(); ++i) {
      p[i] = static_cast<float>(denormalize_value(p[i], c, config));
    }
  }
  return out;
}

namespace {

Planar crop(const Planar& src, int x0, int y0, int size, bool flip) {
  Planar out(src.channels, size, size);
  for (int c = 0; c < src.channels; ++c) {
    for (int y = 0; y < size; ++y) {
      const float* row = &src.values[(static_cast<std::size_t>(c) * src.height +
                                      y0 + y) *
                                         src.width +
                                     x0];
      float* dst = &out.at(c, y, 0);
      if (flip) {
        for (int x = 0; x < size; ++x) dst[x] = row[size - 1 - x];
      } else {
        std::copy_n(row, size, dst);
      }
    }
  }
  return out;
}

}  // namespace

Planar train_transform(const Image& image, const PreprocessConfig& config,
                       const Augmentation& a) {
  config.validate();
  const Planar resized = resize_short_side(image, config.resize_short_side());
  const int t = config.target_size;
  if (resized.height < t || resized.width < t) {
    raise(ErrorKind::kPreprocess, "image smaller than the crop target");
  }
  if (a.crop_x < 0 || a.crop_y < 0 || a.crop_x + t > resized.width ||
      a.crop_y + t > resized.height) {
    raise(ErrorKind::kPreprocess, "crop window outside the resized image");
  }
  Planar out = crop(resized, a.crop_x, a.crop_y, t, a.flip);
  normalize_in_place(out, config);
  return out;
}

Planar train_transform(const Image& image, const PreprocessConfig& config,
                       Rng& rng) {
  config.validate();
  const int s = config.resize_short_side();
  const int h = image.height <= image.width
                    ? s
                    : static_cast<int>((2LL * image.height * s + image.width) /
                                       (2LL * image.width));
  const int w = image.height <= image.width
                    ? static_cast<int>((2LL * image.width * s + image.height) /
                                       (2LL * image.height))
                    : s;
  return train_transform(image, config, sample_augmentation(h, w, config, rng));
}

std::pair<int, int> center_crop_offset(int resized_height, int resized_width,
                                       int target) {
  return {(resized_width - target) / 2, (resized_height - target) / 2};
}

Planar eval_transform(const Image& image, const PreprocessConfig& config) {
  config.validate();
  const Planar resized = resize_short_side(image, config.resize_short_side());
  const int t = config.target_size;
  if (resized.height < t || resized.width < t) {
    raise(ErrorKind::kPreprocess, "resized image smaller than the crop target");
  }
  const auto [x0, y0] = center_crop_offset(resized.height, resized.width, t);
  Planar out = crop(resized, x0, y0, t, false);
  normalize_in_place(out, config);
  return out;
}

Image to_image(const Planar& pixels) {
  Image out(pixels.width, pixels.height, pixels.channels);
  for (int y = 0; y < pixels.height; ++y) {
    for (int x = 0; x < pixels.width; ++x) {
      for (int c = 0; c < pixels.channels; ++c) {
        const double v = std::clamp<double>(pixels.at(c, y, x), 0.0, 255.0);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::floor(v + 0.5));
      }
    }
  }
  return out;
}

}  // namespace fcns::corpus
