#include "fcns/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "fcns/error.hpp"
#include "fcns/rng.hpp"
#include "jsonl.hpp"

namespace fcns::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_ce_inputs(std::span<const double> logits, int num_classes,
                     std::span<const int> labels,
                     std::span<const double> weights) {
  if (num_classes < 1) raise(ErrorKind::kShape, "num_classes must be >= 1");
  if (logits.size() != labels.size() * static_cast<std::size_t>(num_classes)) {
    raise(ErrorKind::kShape,
          "logits size " + std::to_string(logits.size()) + " != " +
              std::to_string(labels.size()) + " x " + std::to_string(num_classes));
  }
  if (weights.size() != static_cast<std::size_t>(num_classes)) {
    raise(ErrorKind::kShape, "expected " + std::to_string(num_classes) +
                                 " class weights, got " +
                                 std::to_string(weights.size()));
  }
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= num_classes) {
      raise(ErrorKind::kLabel, "label " + std::to_string(labels[n]) +
                                   " at row " + std::to_string(n) +
                                   " outside [0, " +
                                   std::to_string(num_classes) + ")");
    }
  }
}

// log-sum-exp of one row and the softmax it implies.
double log_softmax_row(std::span<const double> row, std::vector<double>& probs) {
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  probs.resize(row.size());
  for (std::size_t c = 0; c < row.size(); ++c) {
    probs[c] = std::exp(row[c] - mx);
    sum += probs[c];
  }
  for (auto& p : probs) p /= sum;
  return mx + std::log(sum);
}

}  // namespace

CrossEntropyResult weighted_cross_entropy_grad(std::span<const double> logits,
                                               int num_classes,
                                               std::span<const int> labels,
                                               std::span<const double> weights) {
  check_ce_inputs(logits, num_classes, labels, weights);
  CrossEntropyResult out;
  out.dlogits.assign(logits.size(), 0.0);
  double total_weight = 0.0;
  for (int y : labels) total_weight += weights[y];
  if (total_weight == 0.0) return out;

  std::vector<double> probs;
  double loss = 0.0;
  const auto c = static_cast<std::size_t>(num_classes);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto row = logits.subspan(n * c, c);
    const double lse = log_softmax_row(row, probs);
    const int y = labels[n];
    const double w = weights[y];
    loss += w * (lse - row[y]);
    const double scale = w / total_weight;
    for (std::size_t k = 0; k < c; ++k) {
      out.dlogits[n * c + k] =
          scale * (probs[k] - (static_cast<int>(k) == y ? 1.0 : 0.0));
    }
  }
  out.loss = loss / total_weight;
  return out;
}

double weighted_cross_entropy(std::span<const double> logits, int num_classes,
                              std::span<const int> labels,
                              std::span<const double> weights) {
  check_ce_inputs(logits, num_classes, labels, weights);
  double total_weight = 0.0;
  for (int y : labels) total_weight += weights[y];
  if (total_weight == 0.0) return 0.0;
  std::vector<double> probs;
  double loss = 0.0;
  const auto c = static_cast<std::size_t>(num_classes);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto row = logits.subspan(n * c, c);
    loss += weights[labels[n]] * (log_softmax_row(row, probs) - row[labels[n]]);
  }
  return loss / total_weight;
}

double weighted_cross_entropy(std::span<const double> logits, int num_classes,
                              std::span<const int> labels,
                              const ClassWeightVector& weights) {
  return weighted_cross_entropy(logits, num_classes, labels, weights.weights);
}

ClassWeightVector class_weights(std::span<const long long> class_counts) {
  if (class_counts.empty()) raise(ErrorKind::kEmptyInput, "no class counts");
  ClassWeightVector out;
  out.num_classes = static_cast<int>(class_counts.size());
  out.class_counts.assign(class_counts.begin(), class_counts.end());
  std::vector<std::string> empty;
  for (std::size_t i = 0; i < class_counts.size(); ++i) {
    if (class_counts[i] < 0) {
      raise(ErrorKind::kRange, "negative count for class " + std::to_string(i));
    }
    if (class_counts[i] == 0) empty.push_back(std::to_string(i));
    out.total_samples += class_counts[i];
  }
  if (!empty.empty()) {
    std::string names;
    for (const auto& e : empty) names += (names.empty() ? "" : ", ") + e;
    raise(ErrorKind::kDegenerateClass,
          "class weights undefined: no samples for class " + names, empty);
  }
  for (long long count : class_counts) {
    out.weights.push_back(static_cast<double>(out.total_samples) /
                          (static_cast<double>(out.num_classes) *
                           static_cast<double>(count)));
  }
  return out;
}

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(learning_rate > 0.0)) problems.push_back("learning_rate must be > 0");
  if (weight_decay < 0.0) problems.push_back("weight_decay must be >= 0");
  if (warmup_epochs < 0) problems.push_back("warmup_epochs must be >= 0");
  if (max_epochs < 2) problems.push_back("max_epochs must be >= 2");
  if (warmup_epochs >= max_epochs) {
    problems.push_back("warmup_epochs must be < max_epochs");
  }
  if (early_stop_patience < 1) problems.push_back("early_stop_patience must be >= 1");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) problems.push_back("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("beta2 must be in [0, 1)");
  if (!(eps > 0.0)) problems.push_back("eps must be > 0");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) {
    problems.push_back("bn_momentum must be in [0, 1]");
  }
  if (!problems.empty()) {
    raise(ErrorKind::kConfig, "invalid train config: " + problems.front(),
          problems);
  }
  preprocess.validate();
}

json to_json(const TrainConfig& config) {
  return json{{"learning_rate", config.learning_rate},
              {"weight_decay", config.weight_decay},
              {"warmup_epochs", config.warmup_epochs},
              {"max_epochs", config.max_epochs},
              {"early_stop_patience", config.early_stop_patience},
              {"batch_size", config.batch_size},
              {"seed", config.seed},
              {"beta1", config.beta1},
              {"beta2", config.beta2},
              {"eps", config.eps},
              {"bn_momentum", config.bn_momentum},
              {"preprocess", corpus::to_json(config.preprocess)}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) raise(ErrorKind::kConfig, "train config must be an object");
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    if (j.contains("preprocess")) {
      c.preprocess = corpus::preprocess_config_from_json(j.at("preprocess"));
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::kConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(long long global_step, long long steps_per_epoch,
             const TrainConfig& config) {
  const double base = config.learning_rate;
  const long long warmup_steps = config.warmup_epochs * steps_per_epoch;
  const long long total_steps = config.max_epochs * steps_per_epoch;
  if (global_step < warmup_steps) {
    return base * static_cast<double>(global_step + 1) /
           static_cast<double>(warmup_steps);
  }
  const long long span = total_steps - warmup_steps;
  if (span <= 0) return base;
  const double t = std::min(
      1.0, static_cast<double>(global_step - warmup_steps) / static_cast<double>(span));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

void adamw_step(net::ParameterSet& params, const net::GradientMap& grads,
                AdamState& state, double lr, const TrainConfig& config) {
  for (const auto& [name, p] : params) {
    if (net::is_buffer(name)) continue;
    const auto it = grads.find(name);
    if (it == grads.end()) raise(ErrorKind::kShape, "no gradient for " + name);
    if (it->second.shape != p.shape || it->second.size() != p.size()) {
      raise(ErrorKind::kShape, "gradient shape mismatch for " + name);
    }
  }
  for (const auto& [name, g] : grads) {
    if (!params.count(name)) raise(ErrorKind::kShape, "gradient for unknown " + name);
  }

  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    if (net::is_buffer(name)) continue;
    const auto& g = grads.at(name).values;
    auto& m = state.m[name];
    auto& v = state.v[name];
    m.resize(p.size(), 0.0);
    v.resize(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      const double theta = p.values[i];
      p.values[i] = static_cast<float>(
          theta - lr * (m_hat / (std::sqrt(v_hat) + config.eps) +
                        config.weight_decay * theta));
    }
  }
}

EarlyStopping::EarlyStopping(int patience)
    : patience_(patience), best_(-std::numeric_limits<double>::infinity()) {
  if (patience < 1) raise(ErrorKind::kConfig, "patience must be >= 1");
}

bool EarlyStopping::update(double val_accuracy) {
  const int epoch = epochs_++;
  if (val_accuracy > best_) {
    best_ = val_accuracy;
    best_epoch_ = epoch;
    stale_epochs_ = 0;
    return true;
  }
  ++stale_epochs_;
  return false;
}

json to_json(const FoldResult& result) {
  json epochs = json::array();
  for (const auto& e : result.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_accuracy", e.val_accuracy},
                      {"lr", e.lr}});
  }
  return json{{"fold_id", result.fold_id},
              {"best_checkpoint", result.best_checkpoint.string()},
              {"best_val_accuracy", result.best_val_accuracy},
              {"epoch_of_best", result.epoch_of_best},
              {"stopped_early", result.stopped_early},
              {"epochs", epochs}};
}

FoldResult fold_result_from_json(const json& j) {
  FoldResult r;
  try {
    r.fold_id = j.at("fold_id").get<int>();
    r.best_checkpoint = j.at("best_checkpoint").get<std::string>();
    r.best_val_accuracy = j.at("best_val_accuracy").get<double>();
    r.epoch_of_best = j.at("epoch_of_best").get<int>();
    r.stopped_early = j.value("stopped_early", false);
    for (const auto& e : j.at("epochs")) {
      r.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                          e.at("val_accuracy").get<double>(),
                          e.at("lr").get<double>()});
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::kParse, std::string("fold result: ") + e.what());
  }
  return r;
}

void write_epoch_csv(const fs::path& path, std::span<const EpochLog> epochs) {
  std::ostringstream out;
  out << "epoch,train_loss,val_accuracy,lr\n";
  out << std::setprecision(17);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_accuracy << ','
        << e.lr << '\n';
  }
  detail::write_text(path, out.str());
}

Task task_for_classes(int num_classes) {
  switch (num_classes) {
    case 4: return Task::kFourClass;
    case 5: return Task::kFiveClass;
    case 2: return Task::kBinary;
    default:
      raise(ErrorKind::kConfig,
            "no task has " + std::to_string(num_classes) + " classes");
  }
}

Dataset load_dataset(const ingest::Manifest& manifest, Task task) {
  Dataset data;
  data.task = task;
  for (const auto& record : manifest.records) {
    const auto cls = class_index(record.label, task);
    if (!cls) continue;
    data.items.push_back({&record, *cls, read_png(manifest.resolve(record))});
  }
  return data;
}

namespace {

net::Batch transform_batch(const Dataset& data, std::span<const std::size_t> idx,
                           const corpus::PreprocessConfig& pre, Rng* rng) {
  std::vector<Planar> planes;
  planes.reserve(idx.size());
  for (auto i : idx) {
    planes.push_back(rng ? corpus::train_transform(data.items[i].image, pre, *rng)
                         : corpus::eval_transform(data.items[i].image, pre));
  }
  return net::stack(planes);
}

std::vector<std::vector<double>> predict_probabilities(
    const net::Model& model, const std::vector<Planar>& inputs) {
  constexpr std::size_t kChunk = 16;
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < inputs.size(); s += kChunk) {
    const auto e = std::min(inputs.size(), s + kChunk);
    const auto batch = net::stack(std::span(inputs).subspan(s, e - s));
    const auto logits = net::forward(model.config, model.params, batch);
    for (int r = 0; r < logits.rows; ++r) out.push_back(net::softmax(logits.row(r)));
  }
  return out;
}

}  // namespace

FoldOutcome train_fold(const Dataset& data, const corpus::Fold& fold,
                       const net::NetConfig& net_config,
                       const TrainConfig& config, const fs::path& out_dir,
                       const Logger& log) {
  config.validate();
  net_config.validate();
  const int classes = net_config.num_classes;
  if (fcns::num_classes(data.task) != classes) {
    raise(ErrorKind::kConfig, "net has " + std::to_string(classes) +
                                  " classes but task " +
                                  std::string(to_string(data.task)) + " has " +
                                  std::to_string(fcns::num_classes(data.task)));
  }

  const std::set<std::string> train_patients(fold.train_patient_ids.begin(),
                                             fold.train_patient_ids.end());
  const std::set<std::string> test_patients(fold.test_patient_ids.begin(),
                                            fold.test_patient_ids.end());
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const auto& pid = data.items[i].record->patient_id;
    if (train_patients.count(pid)) train_idx.push_back(i);
    if (test_patients.count(pid)) test_idx.push_back(i);
  }
  const std::string tag = "fold " + std::to_string(fold.fold_id);
  if (train_idx.empty()) raise(ErrorKind::kConfig, tag + ": empty training set");
  if (test_idx.empty()) raise(ErrorKind::kConfig, tag + ": empty validation set");

  std::vector<long long> counts(classes, 0);
  for (auto i : train_idx) ++counts[data.items[i].label];
  net::LossSpec loss{class_weights(counts).weights};

  const std::uint64_t fold_seed =
      derive_seed(config.seed, static_cast<std::uint64_t>(fold.fold_id));
  net::Model model{net_config, net::build_model(net_config, derive_seed(fold_seed, 0))};
  Rng rng(derive_seed(fold_seed, 1));

  std::vector<Planar> val_inputs;
  std::vector<int> val_labels;
  for (auto i : test_idx) {
    val_inputs.push_back(corpus::eval_transform(data.items[i].image, config.preprocess));
    val_labels.push_back(data.items[i].label);
  }

  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const long long steps_per_epoch =
      static_cast<long long>((train_idx.size() + batch_size - 1) / batch_size);
  fs::create_directories(out_dir);
  const fs::path ckpt = out_dir / "best.ckpt";

  FoldResult result;
  result.fold_id = fold.fold_id;
  result.best_checkpoint = ckpt;
  EarlyStopping stopper(config.early_stop_patience);
  AdamState opt;
  net::Model best = model;
  long long step = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    auto order = train_idx;
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t s = 0; s < order.size(); s += batch_size) {
      const auto e = std::min(order.size(), s + batch_size);
      const auto idx = std::span(order).subspan(s, e - s);
      const auto batch = transform_batch(data, idx, config.preprocess, &rng);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(data.items[i].label);
      auto g = net::gradients(model.config, model.params, batch, labels, loss);
      lr = lr_at(step++, steps_per_epoch, config);
      adamw_step(model.params, g.gradients, opt, lr, config);
      net::apply_batch_statistics(model.params, g.batch_stats, config.bn_momentum);
      loss_sum += g.loss * static_cast<double>(idx.size());
    }

    const auto probs = predict_probabilities(model, val_inputs);
    int correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (metrics::argmax(probs[i]) == val_labels[i]) ++correct;
    }
    const double val_acc = static_cast<double>(correct) / static_cast<double>(probs.size());
    result.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(order.size()), val_acc, lr});
    const bool improved = stopper.update(val_acc);
    if (improved) {
      best = model;
      net::save_checkpoint(best, ckpt);
    }
    if (log) {
      std::ostringstream msg;
      msg << tag << " epoch " << epoch << " loss "
          << result.epochs.back().train_loss << " val_acc " << val_acc << " lr "
          << lr << (improved ? " *" : "");
      log(msg.str());
    }
    if (stopper.should_stop() && epoch + 1 < config.max_epochs) {
      result.stopped_early = true;
      break;
    }
  }
  result.best_val_accuracy = stopper.best();
  result.epoch_of_best = stopper.best_epoch();

  FoldOutcome outcome;
  const auto probs = predict_probabilities(best, val_inputs);
  for (std::size_t k = 0; k < test_idx.size(); ++k) {
    const auto& rec = *data.items[test_idx[k]].record;
    outcome.test_predictions.push_back({rec.sample_id, rec.patient_id, fold.fold_id,
                                        rec.label, probs[k],
                                        rec.gestational_age_days});
  }
  write_epoch_csv(out_dir / "epochs.csv", result.epochs);
  detail::write_json(out_dir / "result.json", to_json(result));
  outcome.result = std::move(result);
  return outcome;
}

FoldOutcome train_fold(int fold_id, const ingest::Manifest& manifest,
                       const corpus::SplitPlan& split,
                       const net::NetConfig& net_config,
                       const TrainConfig& config, const fs::path& out_dir,
                       const Logger& log) {
  const auto& fold = split.fold(fold_id);
  const auto data = load_dataset(manifest, task_for_classes(net_config.num_classes));
  return train_fold(data, fold, net_config, config, out_dir, log);
}

CrossValidationResult cross_validate(const Dataset& data,
                                     const corpus::SplitPlan& split,
                                     const net::NetConfig& net_config,
                                     const TrainConfig& config,
                                     const fs::path& out_dir, int jobs,
                                     std::vector<int> fold_ids,
                                     const Logger& log) {
  if (fold_ids.empty()) {
    std::set<std::string> usable;
    for (const auto& item : data.items) usable.insert(item.record->patient_id);
    for (const auto& f : split.folds) {
      const bool has_test = std::any_of(f.test_patient_ids.begin(), f.test_patient_ids.end(),
                                        [&](const auto& p) { return usable.count(p) > 0; });
      if (has_test) {
        fold_ids.push_back(f.fold_id);
      } else if (log) {
        log("fold " + std::to_string(f.fold_id) + " skipped: no held-out images for the task");
      }
    }
  }
  std::sort(fold_ids.begin(), fold_ids.end());
  fold_ids.erase(std::unique(fold_ids.begin(), fold_ids.end()), fold_ids.end());
  for (int id : fold_ids) split.fold(id);

  std::mutex log_mutex;
  Logger safe_log;
  if (log) {
    safe_log = [&](const std::string& line) {
      std::lock_guard lock(log_mutex);
      log(line);
    };
  }

  std::vector<FoldOutcome> outcomes(fold_ids.size());
  std::vector<std::exception_ptr> errors(fold_ids.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (auto k = next++; k < fold_ids.size(); k = next++) {
      try {
        outcomes[k] = train_fold(data, split.fold(fold_ids[k]), net_config, config,
                                 out_dir / ("fold_" + std::to_string(fold_ids[k])),
                                 safe_log);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, static_cast<int>(fold_ids.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  CrossValidationResult out;
  for (auto& o : outcomes) {
    out.predictions.insert(out.predictions.end(), o.test_predictions.begin(),
                           o.test_predictions.end());
  }
  out.folds = std::move(outcomes);
  metrics::write_predictions(out_dir / "predictions.jsonl", out.predictions);
  return out;
}

std::vector<double> ensemble_predict(std::span<const net::Model> models,
                                     const Image& image,
                                     const corpus::PreprocessConfig& preprocess) {
  if (models.empty()) raise(ErrorKind::kConfig, "ensemble needs at least one model");
  const int classes = models.front().config.num_classes;
  for (const auto& m : models) {
    if (m.config.num_classes != classes) {
      raise(ErrorKind::kConfig, "ensemble members disagree on num_classes (" +
                                    std::to_string(classes) + " vs " +
                                    std::to_string(m.config.num_classes) + ")");
    }
  }
  const auto batch = net::single(corpus::eval_transform(image, preprocess));
  std::vector<double> mean(classes, 0.0);
  for (const auto& m : models) {
    const auto logits = net::forward(m.config, m.params, batch);
    const auto p = net::softmax(logits.row(0));
    for (int c = 0; c < classes; ++c) mean[c] += p[c];
  }
  for (auto& v : mean) v /= static_cast<double>(models.size());
  return mean;
}

std::vector<double> ensemble_predict(std::span<const fs::path> checkpoints,
                                     const Image& image,
                                     const corpus::PreprocessConfig& preprocess) {
  std::vector<net::Model> models;
  for (const auto& p : checkpoints) models.push_back(net::load_checkpoint(p));
  return ensemble_predict(std::span<const net::Model>(models), image, preprocess);
}

}  // namespace fcns::train
