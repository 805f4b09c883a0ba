#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcns/image.hpp"
#include "fcns/labels.hpp"

namespace fcns::ingest {

// Inclusive frame range sampled every `stride` decoded frames.
struct FrameExtractionSpec {
  int stride = 80;
  int start_frame = 0;
  int end_frame = 0;
};

/// {start + k*stride | start + k*stride <= end}. Throws on stride < 1 or
/// end < start.
std::vector<int> frame_indices(const FrameExtractionSpec& spec);

/// Picks the frames named by frame_indices() from a decoded video.
std::vector<std::pair<int, Image>> extract_frames(
    std::span<const Image> video, const FrameExtractionSpec& spec);

struct CropRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

Image crop_roi(const Image& image, const CropRect& rect);

enum class SampleSource { kStill, kVideoFrame };

struct SampleRecord {
  std::string sample_id;
  std::string patient_id;
  std::string path;
  AnomalyLabel label = AnomalyLabel::kNormal;
  std::optional<PlaneKind> plane;
  std::optional<int> gestational_age_days;
  SampleSource source = SampleSource::kStill;
  std::optional<std::string> video_id;
  std::optional<int> frame_index;
  std::string site;
  // Fields this version does not know about; written back unchanged.
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const SampleRecord& record);
SampleRecord record_from_json(const nlohmann::json& j);

struct Manifest {
  std::vector<SampleRecord> records;  // canonical order: by sample_id
  std::map<AnomalyLabel, int> label_counts;
  std::map<std::string, int> patient_counts;
  // Patients known to the study; any without images fail split validation.
  std::vector<std::string> declared_patients;
  // Directory that relative record paths resolve against.
  std::filesystem::path base_dir;

  int patient_count() const { return static_cast<int>(patient_counts.size()); }
  /// Sorted patient ids with at least one image.
  std::vector<std::string> patients() const;
  std::filesystem::path resolve(const SampleRecord& record) const;
};

/// Validates and canonicalizes. Duplicate sample ids and video frames
/// without provenance are reported together in one validation error.
Manifest build_manifest(std::vector<SampleRecord> records,
                        std::vector<std::string> declared_patients = {});

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const Manifest& manifest);

/// "<weeks>w<days>d" or "<weeks>w" -> weeks * 7 + days.
int parse_gestational_age(const std::string& text);

/// Crop sidecar: JSON Lines of {sample_id, x, y, width, height}.
std::map<std::string, CropRect> read_crop_sidecar(
    const std::filesystem::path& path);

/// frames/<video_id>/<frame_index zero-padded to 6>.png
std::filesystem::path frame_path(const std::filesystem::path& root,
                                 const std::string& video_id, int frame_index);

/// Number of decoded frames present for a video (contiguous from 0).
int count_frames(const std::filesystem::path& root, const std::string& video_id);

/// Runs an external decoder (ffmpeg-compatible command line) to populate a
/// frame directory. Returns the number of frames written.
int decode_video(const std::filesystem::path& video_file,
                 const std::filesystem::path& frames_root,
                 const std::string& video_id,
                 const std::string& decoder = "ffmpeg");

struct IngestOptions {
  // JSON Lines, one video per line: video_id, patient_id, label, site and
  // optionally plane, gestational_age ("29w2d"), gestational_age_days,
  // start_frame, end_frame. Frames live under <index dir>/frames/.
  std::optional<std::filesystem::path> videos_index;
  // JSON Lines of still-image SampleRecords; paths relative to the file.
  std::optional<std::filesystem::path> stills_index;
  std::optional<std::filesystem::path> crops;
  int stride = 80;
  std::filesystem::path out_dir;
};

struct IngestSummary {
  Manifest manifest;
  int video_frames = 0;
  int stills = 0;
  int cropped = 0;
};

/// Extracts, crops and catalogs everything into out_dir/images and
/// out_dir/manifest.jsonl.
IngestSummary ingest_corpus(const IngestOptions& options);

/// Sample id given to an extracted frame.
std::string frame_sample_id(const std::string& video_id, int frame_index);

}  // namespace fcns::ingest
