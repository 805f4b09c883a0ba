#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcns/corpus.hpp"
#include "fcns/image.hpp"
#include "fcns/ingest.hpp"
#include "fcns/labels.hpp"
#include "fcns/loss.hpp"
#include "fcns/metrics.hpp"
#include "fcns/net.hpp"

namespace fcns::train {

struct ClassWeightVector {
  long long total_samples = 0;
  int num_classes = 0;
  std::vector<long long> class_counts;
  std::vector<double> weights;  // total / (num_classes * count_i)
};

/// Throws a degenerate-class error when any count is zero.
ClassWeightVector class_weights(std::span<const long long> class_counts);

/// Logits are N x C row-major.
double weighted_cross_entropy(std::span<const double> logits, int num_classes,
                              std::span<const int> labels,
                              const ClassWeightVector& weights);

struct TrainConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.05;
  int warmup_epochs = 1;
  int max_epochs = 30;
  int early_stop_patience = 10;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double bn_momentum = 0.1;
  corpus::PreprocessConfig preprocess;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear warmup over warmup_epochs (step 0 gives base / warmup_steps), then
/// cosine annealing to zero over the remaining steps.
double lr_at(long long global_step, long long steps_per_epoch,
             const TrainConfig& config);

struct AdamState {
  long long step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One decoupled-weight-decay Adam update of every trainable parameter.
/// BatchNorm running statistics are left untouched.
void adamw_step(net::ParameterSet& params, const net::GradientMap& grads,
                AdamState& state, double lr, const TrainConfig& config);

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Records one epoch's validation accuracy; true when it strictly beats
  /// every earlier epoch.
  bool update(double val_accuracy);
  bool should_stop() const { return stale_epochs_ >= patience_; }

  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epochs_seen() const { return epochs_; }

 private:
  int patience_;
  double best_;
  int best_epoch_ = -1;
  int epochs_ = 0;
  int stale_epochs_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct FoldResult {
  int fold_id = 0;
  std::filesystem::path best_checkpoint;
  double best_val_accuracy = 0.0;
  int epoch_of_best = 0;
  std::vector<EpochLog> epochs;
  bool stopped_early = false;
};

nlohmann::json to_json(const FoldResult& result);
FoldResult fold_result_from_json(const nlohmann::json& j);
void write_epoch_csv(const std::filesystem::path& path,
                     std::span<const EpochLog> epochs);

/// Task implied by a classifier width: 4, 5 or 2 classes.
Task task_for_classes(int num_classes);

// Decoded corpus held in memory, shared read-only by concurrent folds.
struct Dataset {
  struct Item {
    const ingest::SampleRecord* record = nullptr;
    int label = 0;  // class index within the task
    Image image;
  };
  Task task = Task::kFourClass;
  std::vector<Item> items;
};

/// Loads every manifest image whose label belongs to the task. The manifest
/// must outlive the dataset.
Dataset load_dataset(const ingest::Manifest& manifest, Task task);

using Logger = std::function<void(const std::string&)>;

struct FoldOutcome {
  FoldResult result;
  std::vector<metrics::PredictionRecord> test_predictions;
};

/// Trains one fold, validating on its held-out patients after every epoch.
/// Writes best.ckpt, epochs.csv and result.json into out_dir and returns
/// the best model's predictions on the held-out images.
FoldOutcome train_fold(const Dataset& data, const corpus::Fold& fold,
                       const net::NetConfig& net_config,
                       const TrainConfig& config,
                       const std::filesystem::path& out_dir,
                       const Logger& log = {});

FoldOutcome train_fold(int fold_id, const ingest::Manifest& manifest,
                       const corpus::SplitPlan& split,
                       const net::NetConfig& net_config,
                       const TrainConfig& config,
                       const std::filesystem::path& out_dir,
                       const Logger& log = {});

struct CrossValidationResult {
  std::vector<FoldOutcome> folds;  // by fold id
  std::vector<metrics::PredictionRecord> predictions;
};

/// Trains the selected folds (all when empty) using up to `jobs` threads.
/// Fold k writes into out_dir/fold_<k>; all held-out predictions are
/// written to out_dir/predictions.jsonl.
CrossValidationResult cross_validate(const Dataset& data,
                                     const corpus::SplitPlan& split,
                                     const net::NetConfig& net_config,
                                     const TrainConfig& config,
                                     const std::filesystem::path& out_dir,
                                     int jobs = 1,
                                     std::vector<int> fold_ids = {},
                                     const Logger& log = {});

/// Mean of the per-model softmax outputs on an eval-transformed image.
std::vector<double> ensemble_predict(std::span<const net::Model> models,
                                     const Image& image,
                                     const corpus::PreprocessConfig& preprocess = {});
std::vector<double> ensemble_predict(
    std::span<const std::filesystem::path> checkpoints, const Image& image,
    const corpus::PreprocessConfig& preprocess = {});

}  // namespace fcns::train
