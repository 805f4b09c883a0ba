#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fcns {

// Class index order is fixed: the four anomalies first, Normal last. The
// four-way task is the prefix, the binary task is Abnormal(0) / Normal(1).
enum class AnomalyLabel {
  kAnencephaly = 0,
  kEncephalocele = 1,
  kHoloprosencephaly = 2,
  kRachischisis = 3,
  kNormal = 4,
};

inline constexpr int kNumAnomalyLabels = 5;

inline constexpr std::array<AnomalyLabel, kNumAnomalyLabels> kAllLabels = {
    AnomalyLabel::kAnencephaly, AnomalyLabel::kEncephalocele,
    AnomalyLabel::kHoloprosencephaly, AnomalyLabel::kRachischisis,
    AnomalyLabel::kNormal};

std::string_view to_string(AnomalyLabel label);
std::optional<AnomalyLabel> parse_label(std::string_view text);
/// Throws a label error naming every valid label.
AnomalyLabel require_label(std::string_view text);

// Standard-plane metadata. Never a training target.
enum class PlaneKind {
  kThalamicTransverse,
  kLateralVentricleTransverse,
  kCerebellarTransverse,
  kSpinalLongitudinal,
  kUnspecified,
};

std::string_view to_string(PlaneKind plane);
std::optional<PlaneKind> parse_plane(std::string_view text);

enum class Task { kFourClass, kFiveClass, kBinary };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view text);
int num_classes(Task task);
std::vector<std::string> class_names(Task task);

/// Class index of a label within a task, or nullopt when the label is not
/// part of the task (Normal in the four-way task).
std::optional<int> class_index(AnomalyLabel label, Task task);

/// Inverse of class_index for the four- and five-way tasks.
AnomalyLabel label_for_index(int index);

}  // namespace fcns
