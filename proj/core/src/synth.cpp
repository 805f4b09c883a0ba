#include "fcns/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fcns/error.hpp"

namespace fcns::synth {

namespace fs = std::filesystem;
using nlohmann::json;

bool BlobGeometry::contains(double x, double y) const {
  if (!present()) return false;
  const double dx = (x - cx) / rx;
  const double dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

json to_json(const BlobGeometry& b) {
  return json{{"shape", b.shape}, {"cx", b.cx}, {"cy", b.cy},
              {"rx", b.rx},       {"ry", b.ry}, {"inner", b.inner}};
}

BlobGeometry blob_from_json(const json& j) {
  BlobGeometry b;
  b.shape = j.value("shape", std::string());
  b.cx = j.value("cx", 0.0);
  b.cy = j.value("cy", 0.0);
  b.rx = j.value("rx", 0.0);
  b.ry = j.value("ry", 0.0);
  b.inner = j.value("inner", 0.0);
  return b;
}

Style sample_style(Rng& rng) {
  Style s;
  s.background = 45.0 + 30.0 * rng.uniform();
  s.speckle = 0.25 + 0.2 * rng.uniform();
  s.blob_intensity = 175.0 + 50.0 * rng.uniform();
  s.scale = 0.9 + 0.2 * rng.uniform();
  return s;
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// 1 inside, 0 outside, linear over a one-pixel band around the boundary.
double coverage(double signed_distance) {
  return std::clamp(0.5 - signed_distance, 0.0, 1.0);
}

BlobGeometry sample_geometry(AnomalyLabel label, const Style& style,
                             int size, Rng& rng) {
  BlobGeometry g;
  const double s = style.scale;
  switch (label) {
    case AnomalyLabel::kAnencephaly:
      g.shape = "disk";
      g.rx = g.ry = s * uniform(rng, 20, 26);
      break;
    case AnomalyLabel::kEncephalocele:
      g.shape = "ring";
      g.rx = g.ry = s * uniform(rng, 36, 44);
      g.inner = g.rx - s * uniform(rng, 9, 12);
      break;
    case AnomalyLabel::kHoloprosencephaly:
      g.shape = "ellipse";
      g.rx = s * uniform(rng, 46, 56);
      g.ry = s * uniform(rng, 16, 21);
      break;
    case AnomalyLabel::kRachischisis:
      g.shape = "ellipse";
      g.rx = s * uniform(rng, 16, 21);
      g.ry = s * uniform(rng, 46, 56);
      break;
    case AnomalyLabel::kNormal:
      return g;
  }
  // Keep the pattern inside the centre crop the evaluation transform takes.
  const double margin = 0.07 * size;
  g.cx = uniform(rng, margin + g.rx, size - margin - g.rx);
  g.cy = uniform(rng, margin + g.ry, size - margin - g.ry);
  return g;
}

double pattern_coverage(const BlobGeometry& g, double x, double y) {
  if (!g.present()) return 0.0;
  const double dx = x - g.cx;
  const double dy = y - g.cy;
  if (g.shape == "ring") {
    const double d = std::hypot(dx, dy);
    return std::min(coverage(d - g.rx), coverage(g.inner - d));
  }
  // Approximate distance to the ellipse boundary.
  const double nx = dx / g.rx;
  const double ny = dy / g.ry;
  const double r = std::sqrt(nx * nx + ny * ny);
  const double radial = std::min(g.rx, g.ry) * (r - 1.0);
  return coverage(radial);
}

}  // namespace

Image render(AnomalyLabel label, const Style& style, int size, Rng& rng,
             BlobGeometry* geometry) {
  const auto g = sample_geometry(label, style, size, rng);
  if (geometry) *geometry = g;

  // A few dim distractor spots shared by every class.
  struct Spot { double x, y, r, gain; };
  std::vector<Spot> spots;
  const int n_spots = 2 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_spots; ++i) {
    spots.push_back({uniform(rng, 10, size - 10), uniform(rng, 10, size - 10),
                     uniform(rng, 3, 6), uniform(rng, 30, 60)});
  }

  Image img(size, size, 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double v = style.background * (1.0 - 0.25 * py / size);
      for (const auto& s : spots) {
        v += s.gain * coverage(std::hypot(px - s.x, py - s.y) - s.r);
      }
      const double c = pattern_coverage(g, px, py);
      v = (1.0 - c) * v + c * style.blob_intensity;
      // Multiplicative speckle.
      v *= std::max(0.0, 1.0 + style.speckle * rng.normal());
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return img;
}

ingest::Manifest generate_corpus(const SynthOptions& options) {
  if (options.patients < 1 || options.images_per_patient < 1) {
    raise(ErrorKind::kConfig, "patients and images_per_patient must be >= 1");
  }
  if (options.image_size < 64) raise(ErrorKind::kConfig, "image_size must be >= 64");
  const auto images_dir = options.out_dir / "images";
  fs::create_directories(images_dir);

  std::vector<ingest::SampleRecord> records;
  for (int p = 0; p < options.patients; ++p) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(p)));
    char pid[32];
    std::snprintf(pid, sizeof pid, "P%03d", p);
    const auto label = kAllLabels[p % kNumAnomalyLabels];
    const int ga = 84 + static_cast<int>(rng.below(245 - 84 + 1));
    for (int i = 0; i < options.images_per_patient; ++i) {
      char sid[48];
      std::snprintf(sid, sizeof sid, "%s_i%03d", pid, i);
      BlobGeometry geometry;
      const auto img = render(label, sample_style(rng), options.image_size, rng, &geometry);
      const auto rel = fs::path("images") / (std::string(sid) + ".png");
      write_png(options.out_dir / rel, img);

      ingest::SampleRecord r;
      r.sample_id = sid;
      r.patient_id = pid;
      r.path = rel.generic_string();
      r.label = label;
      r.gestational_age_days = ga;
      r.site = "synthetic";
      r.plane = label == AnomalyLabel::kNormal
                    ? std::optional(PlaneKind::kThalamicTransverse)
                    : std::nullopt;
      r.extra["blob"] = to_json(geometry);
      records.push_back(std::move(r));
    }
  }
  auto manifest = ingest::build_manifest(std::move(records));
  manifest.base_dir = options.out_dir;
  ingest::write_manifest(options.out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace fcns::synth
