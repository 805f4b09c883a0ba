#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcns/image.hpp"
#include "fcns/ingest.hpp"
#include "fcns/rng.hpp"

namespace fcns::corpus {

enum class SplitScheme { kLoocv, kGroupedKFold };

struct Fold {
  int fold_id = 0;
  std::vector<std::string> train_patient_ids;
  std::vector<std::string> test_patient_ids;
};

// Patient-grouped partition: the unit held out is a patient's whole image set.
struct SplitPlan {
  SplitScheme scheme = SplitScheme::kLoocv;
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;

  const Fold& fold(int fold_id) const;
};

/// One fold per patient, in sorted patient order.
SplitPlan loocv_splits(const ingest::Manifest& manifest);

/// Shuffles patients with `seed`, then deals them into k test groups whose
/// sizes differ by at most one (the first n % k groups take the extra).
SplitPlan grouped_kfold(const ingest::Manifest& manifest, int k,
                        std::uint64_t seed);

struct LeakageViolation {
  enum class Kind {
    kTrainTestOverlap,  // patient in both train and test of one fold
    kNotTested,         // patient never appears in any test set
    kTestedTwice,       // patient in more than one test set, or listed twice in one
    kUnknownPatient,    // patient absent from the manifest
    kUntrackedPatient,  // manifest patient absent from the plan
  };
  Kind kind;
  int fold_id;  // -1 for plan-wide coverage violations
  std::string patient_id;

  friend bool operator==(const LeakageViolation&,
                         const LeakageViolation&) = default;
};

std::string_view to_string(LeakageViolation::Kind kind);

struct LeakageReport {
  std::vector<LeakageViolation> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks the plan against itself; the patient universe is every id it names.
LeakageReport verify_no_leakage(const SplitPlan& plan);
/// Additionally requires the plan's universe to equal the manifest patients.
LeakageReport verify_no_leakage(const SplitPlan& plan,
                                const ingest::Manifest& manifest);

nlohmann::json to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const nlohmann::json& j);
void write_split_plan(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan read_split_plan(const std::filesystem::path& path);

struct PreprocessConfig {
  int target_size = 224;
  double val_resize_factor = 1.143;
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> std = {0.229, 0.224, 0.225};
  double hflip_probability = 0.5;

  /// round-half-up(target_size * val_resize_factor); 256 by default.
  int resize_short_side() const;
  void validate() const;
};

nlohmann::json to_json(const PreprocessConfig& config);
/// Missing keys keep their defaults.
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j);

// Crop window and flip for one training sample.
struct Augmentation {
  int crop_x = 0;
  int crop_y = 0;
  bool flip = false;
};

/// Resizes the short side to `short_side` preserving aspect ratio
/// (long side rounded half up); gray input becomes three channels.
Planar resize_short_side(const Image& image, int short_side);

/// Draws a uniform crop offset and a flip for a resized image of the given
/// dimensions.
Augmentation sample_augmentation(int resized_height, int resized_width,
                                 const PreprocessConfig& config, Rng& rng);

/// Random crop + horizontal flip + normalization, 3 x target x target.
Planar train_transform(const Image& image, const PreprocessConfig& config,
                       Rng& rng);
/// Same pipeline with an explicit crop window and flip decision.
Planar train_transform(const Image& image, const PreprocessConfig& config,
                       const Augmentation& augmentation);

/// Short-side resize to 256, centre crop, normalization. Deterministic.
Planar eval_transform(const Image& image, const PreprocessConfig& config);

/// Top-left corner of the centre crop eval_transform takes.
std::pair<int, int> center_crop_offset(int resized_height, int resized_width,
                                       int target);

/// (pixel / 255 - mean_c) / std_c.
double normalize_value(double pixel, int channel, const PreprocessConfig& config);
double denormalize_value(double value, int channel,
                         const PreprocessConfig& config);
void normalize_in_place(Planar& planar, const PreprocessConfig& config);
/// Maps a normalized tensor back to 0..255 pixel units.
Planar denormalize(const Planar& planar, const PreprocessConfig& config);

/// Rounds a 0..255 planar RGB tensor to an 8-bit interleaved image.
Image to_image(const Planar& pixels);

}  // namespace fcns::corpus
