#include "fcns/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <regex>
#include <set>

#include "fcns/error.hpp"
#include "jsonl.hpp"

namespace fcns::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> frame_indices(const FrameExtractionSpec& spec) {
  if (spec.stride < 1) {
    raise(ErrorKind::kConfig, "frame stride must be >= 1");
  }
  if (spec.start_frame < 0 || spec.end_frame < spec.start_frame) {
    raise(ErrorKind::kRange, "frame range [" + std::to_string(spec.start_frame) +
                                 ", " + std::to_string(spec.end_frame) +
                                 "] is empty or negative");
  }
  std::vector<int> out;
  out.reserve((spec.end_frame - spec.start_frame) / spec.stride + 1);
  for (int i = spec.start_frame; i <= spec.end_frame; i += spec.stride) {
    out.push_back(i);
    if (i > spec.end_frame - spec.stride) break;  // avoid int overflow
  }
  return out;
}

std::vector<std::pair<int, Image>> extract_frames(
    std::span<const Image> video, const FrameExtractionSpec& spec) {
  if (video.empty()) raise(ErrorKind::kEmptyInput, "video has no frames");
  if (spec.end_frame >= static_cast<int>(video.size())) {
    raise(ErrorKind::kRange, "end_frame " + std::to_string(spec.end_frame) +
                                 " beyond last frame " +
                                 std::to_string(video.size() - 1));
  }
  std::vector<std::pair<int, Image>> out;
  for (int index : frame_indices(spec)) out.emplace_back(index, video[index]);
  return out;
}

Image crop_roi(const Image& image, const CropRect& rect) {
  if (rect.x < 0 || rect.y < 0 || rect.width < 1 || rect.height < 1 ||
      rect.x + rect.width > image.width || rect.y + rect.height > image.height) {
    raise(ErrorKind::kRange,
          "crop (" + std::to_string(rect.x) + "," + std::to_string(rect.y) +
              "," + std::to_string(rect.width) + "," +
              std::to_string(rect.height) + ") exceeds " +
              std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  Image out(rect.width, rect.height, image.channels);
  const std::size_t row_bytes =
      static_cast<std::size_t>(rect.width) * image.channels;
  for (int y = 0; y < rect.height; ++y) {
    const auto* src = &image.pixels[(static_cast<std::size_t>(rect.y + y) *
                                         image.width +
                                     rect.x) *
                                    image.channels];
    std::copy_n(src, row_bytes, &out.pixels[y * row_bytes]);
  }
  return out;
}

namespace {

const std::set<std::string> kKnownFields = {
    "sample_id", "patient_id", "path",   "label",       "plane",
    "gestational_age_days",    "source", "video_id",    "frame_index",
    "site"};

std::string_view to_string(SampleSource source) {
  return source == SampleSource::kStill ? "still" : "video_frame";
}

template <typename T>
T required(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) {
    raise(ErrorKind::kValidation, std::string("record missing '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    raise(ErrorKind::kValidation, std::string("record field '") + key +
                                      "' has the wrong type");
  }
}

}  // namespace

json to_json(const SampleRecord& r) {
  json j = r.extra.is_object() ? r.extra : json::object();
  j["sample_id"] = r.sample_id;
  j["patient_id"] = r.patient_id;
  j["path"] = r.path;
  j["label"] = to_string(r.label);
  j["plane"] = r.plane ? json(to_string(*r.plane)) : json(nullptr);
  j["gestational_age_days"] =
      r.gestational_age_days ? json(*r.gestational_age_days) : json(nullptr);
  j["source"] = to_string(r.source);
  j["video_id"] = r.video_id ? json(*r.video_id) : json(nullptr);
  j["frame_index"] = r.frame_index ? json(*r.frame_index) : json(nullptr);
  j["site"] = r.site;
  return j;
}

SampleRecord record_from_json(const json& j) {
  if (!j.is_object()) raise(ErrorKind::kValidation, "record is not an object");
  SampleRecord r;
  r.sample_id = required<std::string>(j, "sample_id");
  r.patient_id = required<std::string>(j, "patient_id");
  r.path = j.value("path", "");
  r.label = require_label(required<std::string>(j, "label"));
  if (j.contains("plane") && !j["plane"].is_null()) {
    auto plane = parse_plane(j["plane"].get<std::string>());
    if (!plane) {
      raise(ErrorKind::kValidation,
            "unknown plane '" + j["plane"].get<std::string>() + "'");
    }
    r.plane = plane;
  }
  if (j.contains("gestational_age_days") &&
      !j["gestational_age_days"].is_null()) {
    r.gestational_age_days = j["gestational_age_days"].get<int>();
    if (*r.gestational_age_days < 0) {
      raise(ErrorKind::kValidation, "negative gestational age");
    }
  }
  const std::string source = j.value("source", "still");
  if (source == "still") {
    r.source = SampleSource::kStill;
  } else if (source == "video_frame") {
    r.source = SampleSource::kVideoFrame;
  } else {
    raise(ErrorKind::kValidation, "unknown source '" + source + "'");
  }
  if (j.contains("video_id") && !j["video_id"].is_null()) {
    r.video_id = j["video_id"].get<std::string>();
  }
  if (j.contains("frame_index") && !j["frame_index"].is_null()) {
    r.frame_index = j["frame_index"].get<int>();
  }
  r.site = j.value("site", "");
  for (const auto& [key, value] : j.items()) {
    if (!kKnownFields.contains(key)) r.extra[key] = value;
  }
  return r;
}

std::vector<std::string> Manifest::patients() const {
  std::vector<std::string> out;
  out.reserve(patient_counts.size());
  for (const auto& [id, count] : patient_counts) out.push_back(id);
  return out;
}

fs::path Manifest::resolve(const SampleRecord& record) const {
  const fs::path p(record.path);
  return p.is_absolute() ? p : base_dir / p;
}

Manifest build_manifest(std::vector<SampleRecord> records,
                        std::vector<std::string> declared_patients) {
  std::sort(records.begin(), records.end(),
            [](const SampleRecord& a, const SampleRecord& b) {
              return a.sample_id < b.sample_id;
            });
  std::vector<std::string> problems;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].sample_id == records[i - 1].sample_id &&
        (i == 1 || records[i - 2].sample_id != records[i].sample_id)) {
      problems.push_back("duplicate sample_id: " + records[i].sample_id);
    }
  }
  for (const auto& r : records) {
    if (r.source == SampleSource::kVideoFrame &&
        (!r.video_id || !r.frame_index)) {
      problems.push_back("video_frame without video_id/frame_index: " +
                         r.sample_id);
    }
    if (r.sample_id.empty()) problems.push_back("empty sample_id");
    if (r.patient_id.empty()) {
      problems.push_back("empty patient_id: " + r.sample_id);
    }
  }
  if (!problems.empty()) {
    std::string message = std::to_string(problems.size()) +
                          " invalid record(s): " + problems.front();
    raise(ErrorKind::kValidation, message, problems);
  }

  Manifest m;
  for (const auto& r : records) {
    ++m.label_counts[r.label];
    ++m.patient_counts[r.patient_id];
  }
  std::sort(declared_patients.begin(), declared_patients.end());
  declared_patients.erase(
      std::unique(declared_patients.begin(), declared_patients.end()),
      declared_patients.end());
  m.declared_patients = std::move(declared_patients);
  m.records = std::move(records);
  return m;
}

Manifest read_manifest(const fs::path& path) {
  std::vector<SampleRecord> records;
  for (const auto& row : detail::read_jsonl(path)) {
    records.push_back(record_from_json(row));
  }
  Manifest m = build_manifest(std::move(records));
  m.base_dir = path.parent_path();
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::vector<json> rows;
  rows.reserve(manifest.records.size());
  for (const auto& r : manifest.records) rows.push_back(to_json(r));
  detail::write_jsonl(path, rows);
}

int parse_gestational_age(const std::string& text) {
  static const std::regex kPattern(R"(^\s*(\d{1,2})\s*w(?:\s*(\d)\s*d)?\s*$)",
                                   std::regex::icase);
  std::smatch match;
  if (!std::regex_match(text, match, kPattern)) {
    raise(ErrorKind::kParse, "gestational age '" + text +
                                 "' is not of the form <weeks>w[<days>d]");
  }
  const int weeks = std::stoi(match[1].str());
  const int days = match[2].matched ? std::stoi(match[2].str()) : 0;
  if (days > 6) {
    raise(ErrorKind::kParse, "gestational age '" + text + "' has days > 6");
  }
  return weeks * 7 + days;
}

std::map<std::string, CropRect> read_crop_sidecar(const fs::path& path) {
  std::map<std::string, CropRect> out;
  for (const auto& row : detail::read_jsonl(path)) {
    try {
      CropRect rect{row.at("x").get<int>(), row.at("y").get<int>(),
                    row.at("width").get<int>(), row.at("height").get<int>()};
      if (!out.emplace(row.at("sample_id").get<std::string>(), rect).second) {
        raise(ErrorKind::kValidation, "duplicate crop for " +
                                          row.at("sample_id").get<std::string>());
      }
    } catch (const json::exception& e) {
      raise(ErrorKind::kParse, path.string() + ": " + e.what());
    }
  }
  return out;
}

fs::path frame_path(const fs::path& root, const std::string& video_id,
                    int frame_index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06d.png", frame_index);
  return root / "frames" / video_id / name;
}

int count_frames(const fs::path& root, const std::string& video_id) {
  int n = 0;
  while (fs::exists(frame_path(root, video_id, n))) ++n;
  return n;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

int decode_video(const fs::path& video_file, const fs::path& frames_root,
                 const std::string& video_id, const std::string& decoder) {
  if (!fs::exists(video_file)) {
    raise(ErrorKind::kIo, "video not found: " + video_file.string());
  }
  const fs::path dir = frames_root / "frames" / video_id;
  fs::create_directories(dir);
  const std::string command =
      shell_quote(decoder) + " -loglevel error -y -i " +
      shell_quote(video_file.string()) + " -start_number 0 " +
      shell_quote((dir / "%06d.png").string()) + " >/dev/null 2>&1";
  if (std::system(command.c_str()) != 0) {
    raise(ErrorKind::kIo, "decoder '" + decoder + "' failed on " +
                              video_file.string());
  }
  return count_frames(frames_root, video_id);
}

std::string frame_sample_id(const std::string& video_id, int frame_index) {
  char suffix[32];
  std::snprintf(suffix, sizeof(suffix), "_f%06d", frame_index);
  return video_id + suffix;
}

IngestSummary ingest_corpus(const IngestOptions& options) {
  if (!options.videos_index && !options.stills_index) {
    raise(ErrorKind::kConfig, "nothing to ingest: no videos or stills index");
  }
  std::map<std::string, CropRect> crops;
  if (options.crops) crops = read_crop_sidecar(*options.crops);

  IngestSummary summary;
  std::vector<SampleRecord> records;
  const fs::path image_dir = options.out_dir / "images";

  auto emit = [&](SampleRecord record, Image image) {
    if (auto it = crops.find(record.sample_id); it != crops.end()) {
      image = crop_roi(image, it->second);
      ++summary.cropped;
    }
    record.path = "images/" + record.sample_id + ".png";
    write_png(options.out_dir / record.path, image);
    records.push_back(std::move(record));
  };

  if (options.videos_index) {
    const fs::path root = options.videos_index->parent_path();
    for (const auto& row : detail::read_jsonl(*options.videos_index)) {
      const auto video_id = required<std::string>(row, "video_id");
      const int frames = count_frames(root, video_id);
      if (frames == 0) {
        raise(ErrorKind::kEmptyInput, "no decoded frames for video " + video_id);
      }
      FrameExtractionSpec spec;
      spec.stride = options.stride;
      spec.start_frame = row.value("start_frame", 0);
      spec.end_frame = row.value("end_frame", frames - 1);
      if (spec.end_frame >= frames) {
        raise(ErrorKind::kRange, "end_frame " + std::to_string(spec.end_frame) +
                                     " beyond " + std::to_string(frames) +
                                     " frames of " + video_id);
      }
      SampleRecord base;
      base.patient_id = required<std::string>(row, "patient_id");
      base.label = require_label(required<std::string>(row, "label"));
      base.site = row.value("site", "");
      if (row.contains("plane") && !row["plane"].is_null()) {
        base.plane = parse_plane(row["plane"].get<std::string>());
      }
      if (row.contains("gestational_age_days")) {
        base.gestational_age_days = row["gestational_age_days"].get<int>();
      } else if (row.contains("gestational_age")) {
        base.gestational_age_days =
            parse_gestational_age(row["gestational_age"].get<std::string>());
      }
      base.source = SampleSource::kVideoFrame;
      base.video_id = video_id;
      for (int index : frame_indices(spec)) {
        SampleRecord record = base;
        record.sample_id = frame_sample_id(video_id, index);
        record.frame_index = index;
        emit(std::move(record), read_png(frame_path(root, video_id, index)));
        ++summary.video_frames;
      }
    }
  }

  if (options.stills_index) {
    const fs::path root = options.stills_index->parent_path();
    for (const auto& row : detail::read_jsonl(*options.stills_index)) {
      SampleRecord record = record_from_json(row);
      record.source = SampleSource::kStill;
      const fs::path src = fs::path(record.path).is_absolute()
                               ? fs::path(record.path)
                               : root / record.path;
      emit(std::move(record), read_png(src));
      ++summary.stills;
    }
  }

  summary.manifest = build_manifest(std::move(records));
  summary.manifest.base_dir = options.out_dir;
  write_manifest(options.out_dir / "manifest.jsonl", summary.manifest);
  return summary;
}

}  // namespace fcns::ingest
