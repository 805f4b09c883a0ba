#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcns/labels.hpp"
#include "fcns/rank_tests.hpp"

namespace fcns::metrics {

struct PredictionRecord {
  std::string sample_id;
  std::string patient_id;
  int fold_id = 0;
  AnomalyLabel true_label = AnomalyLabel::kNormal;
  std::vector<double> probabilities;
  std::optional<int> gestational_age_days;
};

nlohmann::json to_json(const PredictionRecord& record);
PredictionRecord prediction_from_json(const nlohmann::json& j);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records);

/// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const double> values);

struct PatientAggregate {
  std::string patient_id;
  AnomalyLabel true_label = AnomalyLabel::kNormal;
  std::vector<double> probabilities;
  int predicted = 0;
  int image_count = 0;
  std::optional<int> gestational_age_days;
};

/// Mean of the per-image probability vectors of one patient.
PatientAggregate aggregate_patient(std::span<const PredictionRecord> records);

/// Groups by patient (sorted by id) and aggregates each group.
std::vector<PatientAggregate> aggregate_by_patient(
    std::span<const PredictionRecord> records);

// One evaluated unit (image or patient) mapped into a task's class indices.
struct ScoredUnit {
  int true_class = 0;
  std::vector<double> probabilities;
};

/// Maps records into task indices. Records whose label is outside the task
/// (Normal in the four-way task) are skipped; probability vectors must have
/// the task's class count.
std::vector<ScoredUnit> scored_units(std::span<const PredictionRecord> records,
                                     Task task);
std::vector<ScoredUnit> scored_units(std::span<const PatientAggregate> patients,
                                     Task task);

struct ConfusionMatrix {
  int classes = 0;
  std::vector<long long> counts;  // row = true, column = predicted

  explicit ConfusionMatrix(int n = 0)
      : classes(n), counts(static_cast<std::size_t>(n) * n, 0) {}
  long long at(int truth, int predicted) const {
    return counts[static_cast<std::size_t>(truth) * classes + predicted];
  }
  long long& at(int truth, int predicted) {
    return counts[static_cast<std::size_t>(truth) * classes + predicted];
  }
  long long total() const;
  long long trace() const;

  static ConfusionMatrix from_rows(const std::vector<std::vector<long long>>& rows);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const ScoredUnit> units, int classes);

enum class Averaging { kMacro, kMicro };

struct SummaryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> per_class_precision;
  std::vector<double> per_class_recall;
  std::vector<double> per_class_f1;
  // Classes whose precision or recall denominator was zero (scored as 0).
  std::vector<int> zero_denominator_classes;
};

SummaryMetrics summary_metrics(const ConfusionMatrix& matrix,
                               Averaging averaging);

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  std::vector<double> thresholds;  // +inf for the (0, 0) origin
  double auc = 0.0;
};

/// Threshold sweep over distinct scores. The AUC is the Mann-Whitney
/// probability P(score+ > score-) + 0.5 P(tie), computed from integer
/// pair counts.
RocCurve roc_auc(std::span<const double> scores, const std::vector<bool>& positives);

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  std::vector<double> thresholds;
  double auc = 0.0;  // average precision: sum (R_k - R_{k-1}) * P_k
};

PrCurve pr_auc(std::span<const double> scores, const std::vector<bool>& positives);

enum class RocMode { kPerClass, kMicro, kMacro };

inline constexpr int kMacroGridPoints = 257;

struct MulticlassRoc {
  std::vector<RocCurve> curves;  // C curves for per-class, one otherwise
  std::vector<double> aucs;
};

/// per_class: one-vs-rest per class. micro: every (unit, class) pair pooled
/// into one binary problem. macro: per-class curves linearly interpolated on
/// a 257-point FPR grid, averaged, integrated by the trapezoid rule.
MulticlassRoc multiclass_roc(std::span<const ScoredUnit> units, int classes,
                             RocMode mode);

/// Tpr of a curve at an arbitrary fpr (upper value on vertical segments).
double interpolate_tpr(const RocCurve& curve, double fpr);

/// Normal stays Normal; the four anomalies pool into Abnormal, whose
/// probability is the sum of theirs. Output vectors are [Abnormal, Normal].
std::vector<PredictionRecord> binary_collapse(
    std::span<const PredictionRecord> records);

enum class SubgroupTest { kMannWhitney, kWelch };

struct SubgroupReport {
  int cutoff_days = 140;
  std::vector<double> group_a;  // gestational age < cutoff
  std::vector<double> group_b;  // gestational age >= cutoff
  double statistic = 0.0;
  double p_value = 1.0;
  std::string test_name;
};

/// Compares the probability assigned to the true class between the two
/// gestational-age groups. Units without a gestational age are ignored.
SubgroupReport subgroup_compare(std::span<const ScoredUnit> units,
                                std::span<const std::optional<int>> ages,
                                int cutoff_days = 140,
                                SubgroupTest test = SubgroupTest::kMannWhitney);
SubgroupReport subgroup_compare(std::span<const PredictionRecord> records,
                                Task task, int cutoff_days = 140,
                                SubgroupTest test = SubgroupTest::kMannWhitney);

nlohmann::json to_json(const ConfusionMatrix& matrix);
nlohmann::json to_json(const SummaryMetrics& summary);
nlohmann::json to_json(const SubgroupReport& report);

struct EvaluationOptions {
  Task task = Task::kFourClass;
  int subgroup_cutoff_days = 140;
  SubgroupTest subgroup_test = SubgroupTest::kMannWhitney;
};

struct LevelReport {
  ConfusionMatrix confusion;
  SummaryMetrics macro;
  SummaryMetrics micro;
  std::vector<RocCurve> per_class_roc;  // empty entries for absent classes
  std::vector<bool> class_present;
  std::optional<RocCurve> micro_roc;
  std::optional<MulticlassRoc> macro_roc;
  std::vector<PrCurve> per_class_pr;
  std::vector<std::string> notes;
};

struct EvaluationReport {
  Task task = Task::kFourClass;
  std::vector<std::string> class_names;
  LevelReport image_level;
  LevelReport patient_level;
  std::optional<SubgroupReport> subgroup;
  std::vector<std::string> notes;
};

/// Image- and patient-level evaluation of a prediction set. For the binary
/// task five-class records are collapsed first.
EvaluationReport evaluate(std::span<const PredictionRecord> records,
                          const EvaluationOptions& options);
nlohmann::json to_json(const EvaluationReport& report);

/// Writes report.json plus fpr,tpr and recall,precision CSV dumps and SVG
/// plots next to it.
void write_report(const std::filesystem::path& report_path,
                  const EvaluationReport& report);

}  // namespace fcns::metrics
