#include "fcns/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "fcns/error.hpp"
#include "jsonl.hpp"
#include "svg_plot.hpp"

namespace fcns::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const PredictionRecord& record) {
  json j{{"sample_id", record.sample_id},
         {"patient_id", record.patient_id},
         {"fold_id", record.fold_id},
         {"true_label", std::string(to_string(record.true_label))},
         {"probabilities", record.probabilities}};
  if (record.gestational_age_days) {
    j["gestational_age_days"] = *record.gestational_age_days;
  }
  return j;
}

PredictionRecord prediction_from_json(const json& j) {
  PredictionRecord r;
  try {
    r.sample_id = j.at("sample_id").get<std::string>();
    r.patient_id = j.at("patient_id").get<std::string>();
    r.fold_id = j.value("fold_id", 0);
    r.true_label = require_label(j.at("true_label").get<std::string>());
    r.probabilities = j.at("probabilities").get<std::vector<double>>();
    if (j.contains("gestational_age_days") && !j["gestational_age_days"].is_null()) {
      r.gestational_age_days = j["gestational_age_days"].get<int>();
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::kParse, std::string("prediction record: ") + e.what());
  }
  if (r.probabilities.empty()) {
    raise(ErrorKind::kValidation, r.sample_id + ": empty probability vector");
  }
  double sum = 0.0;
  for (double p : r.probabilities) {
    if (!(p >= 0.0)) raise(ErrorKind::kValidation, r.sample_id + ": negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    raise(ErrorKind::kValidation, r.sample_id + ": probabilities sum to " +
                                      std::to_string(sum));
  }
  return r;
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  std::vector<PredictionRecord> out;
  for (const auto& row : detail::read_jsonl(path)) {
    out.push_back(prediction_from_json(row));
  }
  return out;
}

void write_predictions(const fs::path& path,
                       std::span<const PredictionRecord> records) {
  std::vector<json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  detail::write_jsonl(path, rows);
}

int argmax(std::span<const double> values) {
  if (values.empty()) raise(ErrorKind::kEmptyInput, "argmax of empty vector");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

PatientAggregate aggregate_patient(std::span<const PredictionRecord> records) {
  if (records.empty()) raise(ErrorKind::kEmptyInput, "no records to aggregate");
  PatientAggregate out;
  out.patient_id = records.front().patient_id;
  out.true_label = records.front().true_label;
  const auto width = records.front().probabilities.size();
  // Sort copies so the floating-point sum does not depend on input order.
  std::vector<const PredictionRecord*> sorted;
  for (const auto& r : records) {
    if (r.patient_id != out.patient_id) {
      raise(ErrorKind::kAggregation, "mixed patient ids: " + out.patient_id +
                                         " and " + r.patient_id);
    }
    if (r.probabilities.size() != width) {
      raise(ErrorKind::kAggregation,
            "patient " + out.patient_id + ": probability vectors differ in length");
    }
    if (r.true_label != out.true_label) {
      raise(ErrorKind::kAggregation,
            "patient " + out.patient_id + ": images carry different labels");
    }
    if (!out.gestational_age_days) out.gestational_age_days = r.gestational_age_days;
    sorted.push_back(&r);
  }
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) {
    return std::tie(a->sample_id, a->probabilities) <
           std::tie(b->sample_id, b->probabilities);
  });
  out.probabilities.assign(width, 0.0);
  for (const auto* r : sorted) {
    for (std::size_t c = 0; c < width; ++c) out.probabilities[c] += r->probabilities[c];
  }
  for (auto& p : out.probabilities) p /= static_cast<double>(records.size());
  out.predicted = argmax(out.probabilities);
  out.image_count = static_cast<int>(records.size());
  return out;
}

std::vector<PatientAggregate> aggregate_by_patient(
    std::span<const PredictionRecord> records) {
  std::map<std::string, std::vector<PredictionRecord>> groups;
  for (const auto& r : records) groups[r.patient_id].push_back(r);
  std::vector<PatientAggregate> out;
  for (const auto& [id, group] : groups) out.push_back(aggregate_patient(group));
  return out;
}

namespace {

template <typename Unit>
std::vector<ScoredUnit> map_units(std::span<const Unit> units, Task task,
                                  const char* what) {
  const int classes = num_classes(task);
  std::vector<ScoredUnit> out;
  for (const auto& u : units) {
    const auto cls = class_index(u.true_label, task);
    if (!cls) continue;
    if (static_cast<int>(u.probabilities.size()) != classes) {
      raise(ErrorKind::kShape, std::string(what) + " has " +
                                   std::to_string(u.probabilities.size()) +
                                   " probabilities; task " +
                                   std::string(to_string(task)) + " needs " +
                                   std::to_string(classes));
    }
    out.push_back({*cls, u.probabilities});
  }
  return out;
}

}  // namespace

std::vector<ScoredUnit> scored_units(std::span<const PredictionRecord> records,
                                     Task task) {
  return map_units(records, task, "record");
}

std::vector<ScoredUnit> scored_units(std::span<const PatientAggregate> patients,
                                     Task task) {
  return map_units(patients, task, "patient aggregate");
}

long long ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), 0LL);
}

long long ConfusionMatrix::trace() const {
  long long t = 0;
  for (int i = 0; i < classes; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix ConfusionMatrix::from_rows(
    const std::vector<std::vector<long long>>& rows) {
  ConfusionMatrix m(static_cast<int>(rows.size()));
  for (int i = 0; i < m.classes; ++i) {
    if (static_cast<int>(rows[i].size()) != m.classes) {
      raise(ErrorKind::kShape, "confusion matrix must be square");
    }
    for (int j = 0; j < m.classes; ++j) m.at(i, j) = rows[i][j];
  }
  return m;
}

ConfusionMatrix confusion(std::span<const ScoredUnit> units, int classes) {
  ConfusionMatrix m(classes);
  for (const auto& u : units) {
    if (u.true_class < 0 || u.true_class >= classes) {
      raise(ErrorKind::kLabel, "class " + std::to_string(u.true_class) +
                                   " outside the task");
    }
    ++m.at(u.true_class, argmax(u.probabilities));
  }
  return m;
}

SummaryMetrics summary_metrics(const ConfusionMatrix& matrix,
                               Averaging averaging) {
  SummaryMetrics s;
  const int c = matrix.classes;
  const long long total = matrix.total();
  s.accuracy = total > 0 ? static_cast<double>(matrix.trace()) /
                               static_cast<double>(total)
                         : 0.0;
  long long tp_sum = 0, fp_sum = 0, fn_sum = 0;
  for (int k = 0; k < c; ++k) {
    long long tp = matrix.at(k, k), col = 0, row = 0;
    for (int j = 0; j < c; ++j) {
      col += matrix.at(j, k);
      row += matrix.at(k, j);
    }
    tp_sum += tp;
    fp_sum += col - tp;
    fn_sum += row - tp;
    const double p = col > 0 ? static_cast<double>(tp) / col : 0.0;
    const double r = row > 0 ? static_cast<double>(tp) / row : 0.0;
    if (col == 0 || row == 0) s.zero_denominator_classes.push_back(k);
    s.per_class_precision.push_back(p);
    s.per_class_recall.push_back(r);
    s.per_class_f1.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
  }
  if (averaging == Averaging::kMacro) {
    auto mean = [c](const std::vector<double>& v) {
      return c > 0 ? std::accumulate(v.begin(), v.end(), 0.0) / c : 0.0;
    };
    s.precision = mean(s.per_class_precision);
    s.recall = mean(s.per_class_recall);
    s.f1 = mean(s.per_class_f1);
  } else {
    const auto pd = tp_sum + fp_sum;
    const auto rd = tp_sum + fn_sum;
    s.precision = pd > 0 ? static_cast<double>(tp_sum) / pd : 0.0;
    s.recall = rd > 0 ? static_cast<double>(tp_sum) / rd : 0.0;
    s.f1 = s.precision + s.recall > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
  }
  return s;
}

namespace {

struct ScoreGroup {
  double score;
  long long pos = 0;
  long long neg = 0;
};

// Distinct scores in descending order with their class counts.
std::vector<ScoreGroup> group_scores(std::span<const double> scores,
                                     const std::vector<bool>& positives,
                                     long long& total_pos, long long& total_neg) {
  if (scores.size() != positives.size()) {
    raise(ErrorKind::kShape, "scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  for (double s : scores) {
    if (std::isnan(s)) raise(ErrorKind::kValidation, "NaN score");
  }
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::vector<ScoreGroup> groups;
  total_pos = total_neg = 0;
  for (auto i : order) {
    if (groups.empty() || groups.back().score != scores[i]) {
      groups.push_back({scores[i]});
    }
    if (positives[i]) {
      ++groups.back().pos;
      ++total_pos;
    } else {
      ++groups.back().neg;
      ++total_neg;
    }
  }
  return groups;
}

}  // namespace

RocCurve roc_auc(std::span<const double> scores, const std::vector<bool>& positives) {
  long long P = 0, N = 0;
  const auto groups = group_scores(scores, positives, P, N);
  if (P == 0 || N == 0) {
    raise(ErrorKind::kUndefinedMetric,
          "ROC AUC needs at least one positive and one negative (got " +
              std::to_string(P) + " positive, " + std::to_string(N) + " negative)");
  }
  RocCurve c;
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  long long tp = 0, fp = 0;
  // Twice the number of correctly ordered pairs, ties counted once.
  long long doubled = 0;
  for (const auto& g : groups) {
    doubled += g.neg * (2 * tp + g.pos);
    tp += g.pos;
    fp += g.neg;
    c.fpr.push_back(static_cast<double>(fp) / N);
    c.tpr.push_back(static_cast<double>(tp) / P);
    c.thresholds.push_back(g.score);
  }
  c.auc = static_cast<double>(doubled) / (2.0 * static_cast<double>(P) * N);
  return c;
}

PrCurve pr_auc(std::span<const double> scores, const std::vector<bool>& positives) {
  long long P = 0, N = 0;
  const auto groups = group_scores(scores, positives, P, N);
  if (P == 0) raise(ErrorKind::kUndefinedMetric, "PR AUC needs at least one positive");
  PrCurve c;
  c.recall.push_back(0.0);
  c.precision.push_back(1.0);
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  long long tp = 0, fp = 0;
  double prev_recall = 0.0;
  for (const auto& g : groups) {
    tp += g.pos;
    fp += g.neg;
    const double r = static_cast<double>(tp) / P;
    const double p = static_cast<double>(tp) / (tp + fp);
    c.auc += (r - prev_recall) * p;
    prev_recall = r;
    c.recall.push_back(r);
    c.precision.push_back(p);
    c.thresholds.push_back(g.score);
  }
  return c;
}

double interpolate_tpr(const RocCurve& curve, double fpr) {
  const auto& xs = curve.fpr;
  const auto& ys = curve.tpr;
  if (xs.empty()) return 0.0;
  // Last point with x <= fpr; on vertical runs that is the highest tpr.
  const auto it = std::upper_bound(xs.begin(), xs.end(), fpr);
  if (it == xs.begin()) return ys.front();
  const auto j = static_cast<std::size_t>(it - xs.begin()) - 1;
  if (xs[j] == fpr || j + 1 == xs.size()) return ys[j];
  const double t = (fpr - xs[j]) / (xs[j + 1] - xs[j]);
  return ys[j] + t * (ys[j + 1] - ys[j]);
}

namespace {

RocCurve one_vs_rest(std::span<const ScoredUnit> units, int cls, const std::string& name) {
  std::vector<double> scores;
  std::vector<bool> pos;
  for (const auto& u : units) {
    scores.push_back(u.probabilities[cls]);
    pos.push_back(u.true_class == cls);
  }
  try {
    return roc_auc(scores, pos);
  } catch (const Error& e) {
    raise(ErrorKind::kUndefinedMetric,
          "class " + name + " has no positive or no negative units", {name});
  }
}

}  // namespace

MulticlassRoc multiclass_roc(std::span<const ScoredUnit> units, int classes,
                             RocMode mode) {
  MulticlassRoc out;
  for (const auto& u : units) {
    if (static_cast<int>(u.probabilities.size()) != classes) {
      raise(ErrorKind::kShape, "probability vector length != class count");
    }
  }
  auto name = [](int c) { return "#" + std::to_string(c); };
  if (mode == RocMode::kMicro) {
    std::vector<double> scores;
    std::vector<bool> pos;
    for (const auto& u : units) {
      for (int c = 0; c < classes; ++c) {
        scores.push_back(u.probabilities[c]);
        pos.push_back(u.true_class == c);
      }
    }
    out.curves.push_back(roc_auc(scores, pos));
    out.aucs.push_back(out.curves.back().auc);
    return out;
  }
  std::vector<RocCurve> per_class;
  for (int c = 0; c < classes; ++c) per_class.push_back(one_vs_rest(units, c, name(c)));
  if (mode == RocMode::kPerClass) {
    for (const auto& c : per_class) out.aucs.push_back(c.auc);
    out.curves = std::move(per_class);
    return out;
  }
  RocCurve macro;
  for (int i = 0; i < kMacroGridPoints; ++i) {
    const double x = static_cast<double>(i) / (kMacroGridPoints - 1);
    double sum = 0.0;
    for (const auto& c : per_class) sum += interpolate_tpr(c, x);
    macro.fpr.push_back(x);
    macro.tpr.push_back(sum / classes);
    macro.thresholds.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  for (int i = 1; i < kMacroGridPoints; ++i) {
    macro.auc += (macro.fpr[i] - macro.fpr[i - 1]) *
                 (macro.tpr[i] + macro.tpr[i - 1]) / 2.0;
  }
  out.aucs.push_back(macro.auc);
  out.curves.push_back(std::move(macro));
  return out;
}

std::vector<PredictionRecord> binary_collapse(
    std::span<const PredictionRecord> records) {
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.probabilities.size() != kNumAnomalyLabels) {
      raise(ErrorKind::kShape, r.sample_id + ": binary collapse needs " +
                                   std::to_string(kNumAnomalyLabels) +
                                   " probabilities, got " +
                                   std::to_string(r.probabilities.size()));
    }
    PredictionRecord c = r;
    const auto normal = static_cast<std::size_t>(AnomalyLabel::kNormal);
    double abnormal = 0.0;
    for (std::size_t k = 0; k < r.probabilities.size(); ++k) {
      if (k != normal) abnormal += r.probabilities[k];
    }
    c.probabilities = {abnormal, r.probabilities[normal]};
    out.push_back(std::move(c));
  }
  return out;
}

SubgroupReport subgroup_compare(std::span<const ScoredUnit> units,
                                std::span<const std::optional<int>> ages,
                                int cutoff_days, SubgroupTest test) {
  if (units.size() != ages.size()) {
    raise(ErrorKind::kShape, "units and ages differ in length");
  }
  SubgroupReport r;
  r.cutoff_days = cutoff_days;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!ages[i]) continue;
    const double score = units[i].probabilities[units[i].true_class];
    (*ages[i] < cutoff_days ? r.group_a : r.group_b).push_back(score);
  }
  if (r.group_a.empty() || r.group_b.empty()) {
    raise(ErrorKind::kGrouping,
          "subgroup comparison needs both groups non-empty (below " +
              std::to_string(cutoff_days) + " days: " +
              std::to_string(r.group_a.size()) + ", at or above: " +
              std::to_string(r.group_b.size()) + ")");
  }
  const auto result = test == SubgroupTest::kWelch
                          ? welch_t(r.group_a, r.group_b)
                          : mann_whitney_u(r.group_a, r.group_b);
  r.statistic = result.statistic;
  r.p_value = result.p_value;
  r.test_name = result.method;
  return r;
}

SubgroupReport subgroup_compare(std::span<const PredictionRecord> records,
                                Task task, int cutoff_days, SubgroupTest test) {
  std::vector<ScoredUnit> units;
  std::vector<std::optional<int>> ages;
  const int classes = num_classes(task);
  for (const auto& r : records) {
    const auto cls = class_index(r.true_label, task);
    if (!cls) continue;
    if (static_cast<int>(r.probabilities.size()) != classes) {
      raise(ErrorKind::kShape, r.sample_id + ": probability vector length != " +
                                   std::to_string(classes));
    }
    units.push_back({*cls, r.probabilities});
    ages.push_back(r.gestational_age_days);
  }
  return subgroup_compare(units, ages, cutoff_days, test);
}

json to_json(const ConfusionMatrix& matrix) {
  json rows = json::array();
  for (int i = 0; i < matrix.classes; ++i) {
    json row = json::array();
    for (int j = 0; j < matrix.classes; ++j) row.push_back(matrix.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

json to_json(const SummaryMetrics& s) {
  return json{{"accuracy", s.accuracy},
              {"precision", s.precision},
              {"recall", s.recall},
              {"f1", s.f1},
              {"per_class_precision", s.per_class_precision},
              {"per_class_recall", s.per_class_recall},
              {"per_class_f1", s.per_class_f1},
              {"zero_denominator_classes", s.zero_denominator_classes}};
}

json to_json(const SubgroupReport& r) {
  return json{{"cutoff_days", r.cutoff_days},
              {"group_a", r.group_a},
              {"group_b", r.group_b},
              {"statistic", r.statistic},
              {"p_value", r.p_value},
              {"test_name", r.test_name}};
}

namespace {

LevelReport evaluate_level(std::span<const ScoredUnit> units, Task task) {
  const int classes = num_classes(task);
  const auto names = class_names(task);
  LevelReport level;
  level.confusion = confusion(units, classes);
  level.macro = summary_metrics(level.confusion, Averaging::kMacro);
  level.micro = summary_metrics(level.confusion, Averaging::kMicro);
  level.per_class_roc.resize(classes);
  level.per_class_pr.resize(classes);
  level.class_present.assign(classes, false);
  bool all_present = true;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> scores;
    std::vector<bool> pos;
    long long p = 0;
    for (const auto& u : units) {
      scores.push_back(u.probabilities[c]);
      pos.push_back(u.true_class == c);
      p += u.true_class == c;
    }
    const auto n = static_cast<long long>(units.size()) - p;
    if (p > 0 && n > 0) {
      level.class_present[c] = true;
      level.per_class_roc[c] = roc_auc(scores, pos);
      level.per_class_pr[c] = pr_auc(scores, pos);
    } else {
      all_present = false;
      level.notes.push_back("curves for " + names[c] + " undefined: " +
                            (p == 0 ? "no positive units" : "no negative units"));
    }
  }
  if (!units.empty() && classes >= 2) {
    level.micro_roc = multiclass_roc(units, classes, RocMode::kMicro).curves.front();
  }
  if (all_present) level.macro_roc = multiclass_roc(units, classes, RocMode::kMacro);
  return level;
}

json level_json(const LevelReport& level, const std::vector<std::string>& names) {
  json per_class = json::object();
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (!level.class_present[c]) {
      per_class[names[c]] = nullptr;
      continue;
    }
    per_class[names[c]] = {{"roc_auc", level.per_class_roc[c].auc},
                           {"pr_auc", level.per_class_pr[c].auc}};
  }
  json j{{"units", level.confusion.total()},
         {"confusion", to_json(level.confusion)},
         {"macro", to_json(level.macro)},
         {"micro", to_json(level.micro)},
         {"per_class", per_class},
         {"micro_roc_auc", level.micro_roc ? json(level.micro_roc->auc) : json()},
         {"macro_roc_auc",
          level.macro_roc ? json(level.macro_roc->aucs.front()) : json()},
         {"notes", level.notes}};
  return j;
}

std::string curve_csv(const std::string& header, const std::vector<double>& x,
                      const std::vector<double>& y) {
  std::ostringstream s;
  s << std::setprecision(12) << header << '\n';
  for (std::size_t i = 0; i < x.size(); ++i) s << x[i] << ',' << y[i] << '\n';
  return s.str();
}

std::string slug(std::string text) {
  for (auto& c : text) {
    c = std::isalnum(static_cast<unsigned char>(c))
            ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
            : '_';
  }
  return text;
}

void write_level(const fs::path& dir, const std::string& level_name,
                 const LevelReport& level, const std::vector<std::string>& names) {
  std::vector<detail::Series> roc, pr;
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (!level.class_present[c]) continue;
    const auto& r = level.per_class_roc[c];
    const auto& p = level.per_class_pr[c];
    const auto stem = level_name + "_" + slug(names[c]);
    detail::write_text(dir / (stem + "_roc.csv"), curve_csv("fpr,tpr", r.fpr, r.tpr));
    detail::write_text(dir / (stem + "_pr.csv"),
                       curve_csv("recall,precision", p.recall, p.precision));
    std::ostringstream label;
    label << std::fixed << std::setprecision(3);
    label << names[c] << " (AUC " << r.auc << ")";
    roc.push_back({label.str(), r.fpr, r.tpr});
    label.str("");
    label << names[c] << " (AP " << p.auc << ")";
    pr.push_back({label.str(), p.recall, p.precision});
  }
  if (level.micro_roc) {
    detail::write_text(dir / (level_name + "_micro_roc.csv"),
                       curve_csv("fpr,tpr", level.micro_roc->fpr, level.micro_roc->tpr));
    roc.push_back({"micro-average", level.micro_roc->fpr, level.micro_roc->tpr});
  }
  if (level.macro_roc) {
    const auto& m = level.macro_roc->curves.front();
    detail::write_text(dir / (level_name + "_macro_roc.csv"),
                       curve_csv("fpr,tpr", m.fpr, m.tpr));
    roc.push_back({"macro-average", m.fpr, m.tpr});
  }
  detail::write_text(dir / (level_name + "_roc.svg"),
                     detail::line_plot_svg(level_name + " ROC", "False positive rate",
                                           "True positive rate", roc, true));
  detail::write_text(dir / (level_name + "_pr.svg"),
                     detail::line_plot_svg(level_name + " precision-recall",
                                           "Recall", "Precision", pr, false));
  detail::write_text(
      dir / (level_name + "_radar.svg"),
      detail::radar_plot_svg(level_name + " per-class metrics", names,
                             {{"precision", level.macro.per_class_precision},
                              {"recall", level.macro.per_class_recall},
                              {"f1", level.macro.per_class_f1}}));
}

}  // namespace

EvaluationReport evaluate(std::span<const PredictionRecord> records,
                          const EvaluationOptions& options) {
  if (records.empty()) raise(ErrorKind::kEmptyInput, "no prediction records");
  EvaluationReport report;
  report.task = options.task;
  report.class_names = class_names(options.task);

  std::vector<PredictionRecord> working(records.begin(), records.end());
  if (options.task == Task::kBinary &&
      working.front().probabilities.size() == kNumAnomalyLabels) {
    working = binary_collapse(working);
    report.notes.push_back("five-class probabilities collapsed to Abnormal/Normal");
  }
  const auto image_units = scored_units(std::span<const PredictionRecord>(working),
                                        options.task);
  const auto patients = aggregate_by_patient(working);
  const auto patient_units =
      scored_units(std::span<const PatientAggregate>(patients), options.task);
  if (image_units.size() != working.size()) {
    report.notes.push_back(std::to_string(working.size() - image_units.size()) +
                           " records outside the task were ignored");
  }
  report.image_level = evaluate_level(image_units, options.task);
  report.patient_level = evaluate_level(patient_units, options.task);

  std::vector<std::optional<int>> ages;
  for (const auto& p : patients) {
    if (class_index(p.true_label, options.task)) ages.push_back(p.gestational_age_days);
  }
  try {
    report.subgroup = subgroup_compare(patient_units, ages,
                                       options.subgroup_cutoff_days,
                                       options.subgroup_test);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kGrouping) throw;
    report.notes.push_back(std::string("subgroup comparison skipped: ") + e.what());
  }
  return report;
}

json to_json(const EvaluationReport& report) {
  json j{{"task", std::string(to_string(report.task))},
         {"class_names", report.class_names},
         {"image_level", level_json(report.image_level, report.class_names)},
         {"patient_level", level_json(report.patient_level, report.class_names)},
         {"subgroup", report.subgroup ? to_json(*report.subgroup) : json()},
         {"notes", report.notes}};
  return j;
}

void write_report(const fs::path& report_path, const EvaluationReport& report) {
  detail::write_json(report_path, to_json(report));
  const auto dir = report_path.parent_path() / "curves";
  write_level(dir, "image", report.image_level, report.class_names);
  write_level(dir, "patient", report.patient_level, report.class_names);
}

}  // namespace fcns::metrics
