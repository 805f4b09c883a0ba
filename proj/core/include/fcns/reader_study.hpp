#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcns/labels.hpp"

namespace fcns::reader {

struct Case {
  std::string case_id;
  std::string sample_id;
  std::filesystem::path image_path;
  AnomalyLabel true_label = AnomalyLabel::kNormal;
  std::vector<double> model_probabilities;  // four or five classes
  std::optional<std::filesystem::path> overlay_path;
};

/// JSON Lines of {case_id, sample_id, image, true_label,
/// model_probabilities, overlay?}; paths resolve against the file's folder.
std::vector<Case> read_cases(const std::filesystem::path& path);
void write_cases(const std::filesystem::path& path, const std::vector<Case>& cases);

enum class Mode { kBlind, kAssisted };

std::string_view to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view text);

struct ReaderResponse {
  std::string reader_id;
  std::string case_id;
  AnomalyLabel chosen_label = AnomalyLabel::kNormal;
  Mode mode = Mode::kBlind;
  long long elapsed_ms = 0;
  std::string submitted_at;

  friend bool operator==(const ReaderResponse&, const ReaderResponse&) = default;
};

nlohmann::json to_json(const ReaderResponse& response);
ReaderResponse response_from_json(const nlohmann::json& j);

struct ClassRate {
  long long correct = 0;
  long long total = 0;
  std::optional<double> rate() const;
};

struct ParticipantSummary {
  std::string participant;
  std::array<ClassRate, kNumAnomalyLabels> per_class;  // by AnomalyLabel
  long long cases = 0;
};

struct StudySummary {
  std::vector<ParticipantSummary> readers;  // sorted by reader id
  ParticipantSummary model;
  long long responses = 0;
};

nlohmann::json to_json(const StudySummary& summary);

/// Pure recomputation from a case index and a response list.
StudySummary summarize(const std::vector<Case>& cases,
                       const std::vector<std::string>& readers,
                       const std::vector<ReaderResponse>& responses);

/// Model-facing descriptor of a case. Blind mode drops every model field;
/// true labels are never included.
nlohmann::json case_descriptor(const Case& c, Mode mode, long long remaining);

enum class SubmitStatus { kCreated, kDuplicate, kUnknownCase, kUnknownReader };

// Case index plus append-only response log. Thread-safe; appends and the
// duplicate check share one exclusive lock.
class ReaderStudy {
 public:
  /// Replays `data_dir`/responses.jsonl and readers.jsonl when present. An
  /// empty data_dir keeps everything in memory.
  ReaderStudy(std::vector<Case> cases, std::filesystem::path data_dir = {});

  /// Idempotent; returns false when the reader already existed.
  bool register_reader(const std::string& reader_id);
  bool has_reader(const std::string& reader_id) const;
  std::vector<std::string> readers() const;

  const Case* find_case(const std::string& case_id) const;
  const std::vector<Case>& cases() const { return cases_; }

  /// Per-reader deterministic shuffle of all case ids (seeded by reader id).
  std::vector<std::string> case_order(const std::string& reader_id) const;

  struct Next {
    const Case* next = nullptr;  // null once the reader has answered all
    long long remaining = 0;
  };
  /// nullopt for unknown readers.
  std::optional<Next> next_case(const std::string& reader_id) const;

  /// Stamps submitted_at when empty. The response is logged only when the
  /// status is kCreated.
  SubmitStatus submit(ReaderResponse response);

  std::vector<ReaderResponse> responses() const;
  StudySummary summary() const;

 private:
  void append_line(const std::filesystem::path& path, const std::string& line);

  std::vector<Case> cases_;
  std::map<std::string, std::size_t> case_index_;
  std::filesystem::path data_dir_;
  mutable std::shared_mutex mutex_;
  std::set<std::string> readers_;
  std::vector<ReaderResponse> responses_;
  std::set<std::pair<std::string, std::string>> answered_;
};

}  // namespace fcns::reader
