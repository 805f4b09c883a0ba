#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "fcns/image.hpp"
#include "fcns/ingest.hpp"
#include "fcns/labels.hpp"
#include "fcns/rng.hpp"

namespace fcns::synth {

// Class-defining pattern drawn on a speckle background:
//   Anencephaly        filled disk
//   Encephalocele      ring (dark centre)
//   Holoprosencephaly  horizontal ellipse
//   Rachischisis       vertical ellipse
//   Normal             none
struct BlobGeometry {
  std::string shape;  // "disk", "ring", "ellipse"; empty for Normal
  double cx = 0.0;
  double cy = 0.0;
  double rx = 0.0;
  double ry = 0.0;
  double inner = 0.0;  // inner radius of a ring

  bool present() const { return !shape.empty(); }
  /// True when (x, y) lies within the pattern's outer boundary.
  bool contains(double x, double y) const;
};

nlohmann::json to_json(const BlobGeometry& blob);
BlobGeometry blob_from_json(const nlohmann::json& j);

// Image appearance. generate_corpus draws a fresh one for every image.
struct Style {
  double background = 60.0;
  double speckle = 0.35;
  double blob_intensity = 200.0;
  double scale = 1.0;
};

Style sample_style(Rng& rng);

Image render(AnomalyLabel label, const Style& style, int size, Rng& rng,
             BlobGeometry* geometry = nullptr);

struct SynthOptions {
  int patients = 20;
  int images_per_patient = 30;
  std::uint64_t seed = 0;
  int image_size = 256;
  std::filesystem::path out_dir;
};

/// Writes out_dir/images/<sample_id>.png and out_dir/manifest.jsonl.
/// Labels are dealt round-robin over the five classes; every record keeps
/// its pattern geometry under extra["blob"].
ingest::Manifest generate_corpus(const SynthOptions& options);

}  // namespace fcns::synth
