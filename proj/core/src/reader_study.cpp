#include "fcns/reader_study.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

#include "fcns/error.hpp"
#include "fcns/rng.hpp"
#include "fcns/run_manifest.hpp"
#include "jsonl.hpp"

namespace fcns::reader {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int model_prediction(const std::vector<double>& probs) {
  int best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

std::vector<Case> read_cases(const fs::path& path) {
  const auto base = path.parent_path();
  std::vector<Case> cases;
  std::set<std::string> seen;
  for (const auto& row : detail::read_jsonl(path)) {
    Case c;
    try {
      c.case_id = row.at("case_id").get<std::string>();
      c.sample_id = row.value("sample_id", c.case_id);
      c.image_path = base / row.at("image").get<std::string>();
      c.true_label = require_label(row.at("true_label").get<std::string>());
      c.model_probabilities = row.at("model_probabilities").get<std::vector<double>>();
      if (row.contains("overlay") && !row["overlay"].is_null()) {
        c.overlay_path = base / row["overlay"].get<std::string>();
      }
    } catch (const json::exception& e) {
      raise(ErrorKind::kParse, path.string() + ": " + e.what());
    }
    const auto width = c.model_probabilities.size();
    if (width != 4 && width != kNumAnomalyLabels) {
      raise(ErrorKind::kValidation,
            "case " + c.case_id + ": expected 4 or 5 model probabilities");
    }
    if (!seen.insert(c.case_id).second) {
      raise(ErrorKind::kValidation, "duplicate case id " + c.case_id);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

void write_cases(const fs::path& path, const std::vector<Case>& cases) {
  const auto base = path.parent_path();
  std::vector<json> rows;
  for (const auto& c : cases) {
    json row{{"case_id", c.case_id},
             {"sample_id", c.sample_id},
             {"image", fs::relative(c.image_path, base).generic_string()},
             {"true_label", std::string(to_string(c.true_label))},
             {"model_probabilities", c.model_probabilities}};
    if (c.overlay_path) {
      row["overlay"] = fs::relative(*c.overlay_path, base).generic_string();
    }
    rows.push_back(row);
  }
  detail::write_jsonl(path, rows);
}

std::string_view to_string(Mode mode) {
  return mode == Mode::kBlind ? "blind" : "assisted";
}

std::optional<Mode> parse_mode(std::string_view text) {
  if (text == "blind") return Mode::kBlind;
  if (text == "assisted") return Mode::kAssisted;
  return std::nullopt;
}

json to_json(const ReaderResponse& r) {
  return json{{"reader_id", r.reader_id},
              {"case_id", r.case_id},
              {"chosen_label", std::string(to_string(r.chosen_label))},
              {"mode", std::string(to_string(r.mode))},
              {"elapsed_ms", r.elapsed_ms},
              {"submitted_at", r.submitted_at}};
}

ReaderResponse response_from_json(const json& j) {
  if (!j.is_object()) raise(ErrorKind::kValidation, "response must be an object");
  ReaderResponse r;
  try {
    r.reader_id = j.at("reader_id").get<std::string>();
    r.case_id = j.value("case_id", std::string());
    r.chosen_label = require_label(j.at("chosen_label").get<std::string>());
    const auto mode = j.value("mode", std::string("blind"));
    const auto parsed = parse_mode(mode);
    if (!parsed) {
      raise(ErrorKind::kValidation, "mode must be blind or assisted, got " + mode);
    }
    r.mode = *parsed;
    r.elapsed_ms = j.value("elapsed_ms", 0LL);
    r.submitted_at = j.value("submitted_at", std::string());
  } catch (const json::exception& e) {
    raise(ErrorKind::kValidation, std::string("malformed response: ") + e.what());
  }
  if (r.elapsed_ms < 0) raise(ErrorKind::kValidation, "elapsed_ms must be >= 0");
  return r;
}

std::optional<double> ClassRate::rate() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

json participant_json(const ParticipantSummary& p) {
  json per_class = json::object();
  for (auto label : kAllLabels) {
    const auto& r = p.per_class[static_cast<int>(label)];
    const auto rate = r.rate();
    per_class[std::string(to_string(label))] = {
        {"correct", r.correct},
        {"total", r.total},
        {"rate", rate ? json(*rate) : json()}};
  }
  return json{{"participant", p.participant}, {"cases", p.cases},
              {"per_class", per_class}};
}

}  // namespace

json to_json(const StudySummary& s) {
  json readers = json::array();
  for (const auto& r : s.readers) readers.push_back(participant_json(r));
  return json{{"readers", readers},
              {"model", participant_json(s.model)},
              {"responses", s.responses}};
}

StudySummary summarize(const std::vector<Case>& cases,
                       const std::vector<std::string>& readers,
                       const std::vector<ReaderResponse>& responses) {
  std::map<std::string, const Case*> by_id;
  for (const auto& c : cases) by_id[c.case_id] = &c;

  StudySummary s;
  s.model.participant = "model";
  for (const auto& c : cases) {
    auto& rate = s.model.per_class[static_cast<int>(c.true_label)];
    ++rate.total;
    if (label_for_index(model_prediction(c.model_probabilities)) == c.true_label) {
      ++rate.correct;
    }
    ++s.model.cases;
  }

  std::map<std::string, ParticipantSummary> per_reader;
  for (const auto& id : readers) per_reader[id].participant = id;
  for (const auto& r : responses) {
    const auto it = by_id.find(r.case_id);
    if (it == by_id.end()) continue;
    auto& p = per_reader[r.reader_id];
    p.participant = r.reader_id;
    auto& rate = p.per_class[static_cast<int>(it->second->true_label)];
    ++rate.total;
    if (r.chosen_label == it->second->true_label) ++rate.correct;
    ++p.cases;
    ++s.responses;
  }
  for (auto& [id, p] : per_reader) s.readers.push_back(std::move(p));
  return s;
}

json case_descriptor(const Case& c, Mode mode, long long remaining) {
  json j{{"case_id", c.case_id},
         {"mode", std::string(to_string(mode))},
         {"image_url", "/api/cases/" + c.case_id + "/image"},
         {"remaining", remaining}};
  if (mode == Mode::kAssisted) {
    json probs = json::object();
    for (std::size_t k = 0; k < c.model_probabilities.size(); ++k) {
      probs[std::string(to_string(label_for_index(static_cast<int>(k))))] =
          c.model_probabilities[k];
    }
    j["model_probabilities"] = probs;
    if (c.overlay_path) j["overlay_url"] = "/api/cases/" + c.case_id + "/overlay";
  }
  return j;
}

ReaderStudy::ReaderStudy(std::vector<Case> cases, fs::path data_dir)
    : cases_(std::move(cases)), data_dir_(std::move(data_dir)) {
  for (std::size_t i = 0; i < cases_.size(); ++i) {
    if (!case_index_.emplace(cases_[i].case_id, i).second) {
      raise(ErrorKind::kValidation, "duplicate case id " + cases_[i].case_id);
    }
  }
  if (data_dir_.empty()) return;
  fs::create_directories(data_dir_);
  if (fs::exists(data_dir_ / "readers.jsonl")) {
    for (const auto& row : detail::read_jsonl(data_dir_ / "readers.jsonl")) {
      readers_.insert(row.at("reader_id").get<std::string>());
    }
  }
  if (fs::exists(data_dir_ / "responses.jsonl")) {
    for (const auto& row : detail::read_jsonl(data_dir_ / "responses.jsonl")) {
      auto r = response_from_json(row);
      readers_.insert(r.reader_id);
      answered_.emplace(r.reader_id, r.case_id);
      responses_.push_back(std::move(r));
    }
  }
}

void ReaderStudy::append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  out << line << '\n';
  out.flush();
  if (!out) raise(ErrorKind::kIo, "cannot append to " + path.string());
}

bool ReaderStudy::register_reader(const std::string& reader_id) {
  if (reader_id.empty()) raise(ErrorKind::kValidation, "reader id must not be empty");
  std::unique_lock lock(mutex_);
  if (readers_.count(reader_id)) return false;
  if (!data_dir_.empty()) {
    append_line(data_dir_ / "readers.jsonl", json{{"reader_id", reader_id}}.dump());
  }
  readers_.insert(reader_id);
  return true;
}

bool ReaderStudy::has_reader(const std::string& reader_id) const {
  std::shared_lock lock(mutex_);
  return readers_.count(reader_id) > 0;
}

std::vector<std::string> ReaderStudy::readers() const {
  std::shared_lock lock(mutex_);
  return {readers_.begin(), readers_.end()};
}

const Case* ReaderStudy::find_case(const std::string& case_id) const {
  const auto it = case_index_.find(case_id);
  return it == case_index_.end() ? nullptr : &cases_[it->second];
}

std::vector<std::string> ReaderStudy::case_order(const std::string& reader_id) const {
  std::vector<std::string> ids;
  for (const auto& c : cases_) ids.push_back(c.case_id);
  std::sort(ids.begin(), ids.end());
  Rng rng(hash_seed(reader_id));
  rng.shuffle(ids.begin(), ids.end());
  return ids;
}

std::optional<ReaderStudy::Next> ReaderStudy::next_case(
    const std::string& reader_id) const {
  const auto order = case_order(reader_id);
  std::shared_lock lock(mutex_);
  if (!readers_.count(reader_id)) return std::nullopt;
  Next n;
  for (const auto& id : order) {
    if (answered_.count({reader_id, id})) continue;
    if (!n.next) n.next = find_case(id);
    ++n.remaining;
  }
  return n;
}

SubmitStatus ReaderStudy::submit(ReaderResponse response) {
  if (!find_case(response.case_id)) return SubmitStatus::kUnknownCase;
  if (response.submitted_at.empty()) response.submitted_at = utc_timestamp();
  std::unique_lock lock(mutex_);
  if (!readers_.count(response.reader_id)) return SubmitStatus::kUnknownReader;
  if (answered_.count({response.reader_id, response.case_id})) {
    return SubmitStatus::kDuplicate;
  }
  if (!data_dir_.empty()) {
    append_line(data_dir_ / "responses.jsonl", to_json(response).dump());
  }
  answered_.emplace(response.reader_id, response.case_id);
  responses_.push_back(std::move(response));
  return SubmitStatus::kCreated;
}

std::vector<ReaderResponse> ReaderStudy::responses() const {
  std::shared_lock lock(mutex_);
  return responses_;
}

StudySummary ReaderStudy::summary() const {
  std::shared_lock lock(mutex_);
  return summarize(cases_, {readers_.begin(), readers_.end()}, responses_);
}

}  // namespace fcns::reader
