#include "fcns/labels.hpp"

#include "fcns/error.hpp"

namespace fcns {

namespace {

constexpr std::array<std::string_view, kNumAnomalyLabels> kLabelNames = {
    "Anencephaly", "Encephalocele", "Holoprosencephaly", "Rachischisis",
    "Normal"};

constexpr std::array<std::string_view, 5> kPlaneNames = {
    "ThalamicTransverse", "LateralVentricleTransverse", "CerebellarTransverse",
    "SpinalLongitudinal", "Unspecified"};

}  // namespace

std::string_view to_string(AnomalyLabel label) {
  return kLabelNames[static_cast<int>(label)];
}

std::optional<AnomalyLabel> parse_label(std::string_view text) {
  for (int i = 0; i < kNumAnomalyLabels; ++i) {
    if (kLabelNames[i] == text) return static_cast<AnomalyLabel>(i);
  }
  return std::nullopt;
}

AnomalyLabel require_label(std::string_view text) {
  if (auto label = parse_label(text)) return *label;
  std::string valid;
  for (auto name : kLabelNames) {
    if (!valid.empty()) valid += ", ";
    valid += name;
  }
  raise(ErrorKind::kLabel,
        "unknown label '" + std::string(text) + "'; valid labels: " + valid);
}

std::string_view to_string(PlaneKind plane) {
  return kPlaneNames[static_cast<int>(plane)];
}

std::optional<PlaneKind> parse_plane(std::string_view text) {
  for (std::size_t i = 0; i < kPlaneNames.size(); ++i) {
    if (kPlaneNames[i] == text) return static_cast<PlaneKind>(i);
  }
  return std::nullopt;
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::kFourClass: return "4class";
    case Task::kFiveClass: return "5class";
    case Task::kBinary: return "binary";
  }
  return "";
}

std::optional<Task> parse_task(std::string_view text) {
  if (text == "4class") return Task::kFourClass;
  if (text == "5class") return Task::kFiveClass;
  if (text == "binary") return Task::kBinary;
  return std::nullopt;
}

int num_classes(Task task) {
  switch (task) {
    case Task::kFourClass: return 4;
    case Task::kFiveClass: return 5;
    case Task::kBinary: return 2;
  }
  return 0;
}

std::vector<std::string> class_names(Task task) {
  if (task == Task::kBinary) return {"Abnormal", "Normal"};
  std::vector<std::string> names;
  for (int i = 0; i < num_classes(task); ++i) {
    names.emplace_back(kLabelNames[i]);
  }
  return names;
}

std::optional<int> class_index(AnomalyLabel label, Task task) {
  const int raw = static_cast<int>(label);
  switch (task) {
    case Task::kFourClass:
      if (label == AnomalyLabel::kNormal) return std::nullopt;
      return raw;
    case Task::kFiveClass:
      return raw;
    case Task::kBinary:
      return label == AnomalyLabel::kNormal ? 1 : 0;
  }
  return std::nullopt;
}

AnomalyLabel label_for_index(int index) {
  if (index < 0 || index >= kNumAnomalyLabels) {
    raise(ErrorKind::kLabel, "class index " + std::to_string(index) +
                                 " outside [0, " +
                                 std::to_string(kNumAnomalyLabels) + ")");
  }
  return static_cast<AnomalyLabel>(index);
}

}  // namespace fcns
