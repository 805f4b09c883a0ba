#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcns/image.hpp"

namespace fcns::net {

// Residual network topology: a 7x7 stride-2 stem (optionally followed by a
// 3x3 stride-2 max pool), four stages of basic two-convolution residual
// blocks, global average pooling and a linear classifier. Stage 1 keeps the
// resolution, stages 2-4 halve it in their first block.
struct NetConfig {
  std::array<int, 4> stage_blocks = {3, 4, 6, 3};
  std::array<int, 4> stage_channels = {64, 128, 256, 512};
  int input_channels = 3;
  int num_classes = 5;
  bool stem_pool = true;

  static NetConfig resnet34(int num_classes);
  /// Small profile for CPU experiments: one block per stage, widths 8..64.
  static NetConfig desk(int num_classes);

  void validate() const;
  /// Output channels of the final stage (classifier input width).
  int feature_channels() const { return stage_channels[3]; }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

nlohmann::json to_json(const NetConfig& config);
NetConfig net_config_from_json(const nlohmann::json& j);

template <typename T>
struct Array {
  std::vector<int> shape;
  std::vector<T> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const Array&, const Array&) = default;
};

// Named float32 arrays, ordered by name. BatchNorm running statistics are
// stored alongside the trainable weights (see is_buffer).
using ParameterSet = std::map<std::string, Array<float>>;
// Same names and shapes as the ParameterSet; buffers get zero gradients.
using GradientMap = std::map<std::string, Array<double>>;

struct ParameterSpec {
  std::string name;
  std::vector<int> shape;
  bool trainable = true;
};

/// Every parameter name and shape implied by a configuration, in
/// construction order.
std::vector<ParameterSpec> parameter_layout(const NetConfig& config);

/// True for running_mean / running_var entries.
bool is_buffer(const std::string& name);

/// Number of scalars; buffers are excluded unless requested.
std::size_t count_parameters(const NetConfig& config,
                             bool include_buffers = false);

/// Fan-in scaled normal init (He for convolutions, 1/sqrt(fan_in) for the
/// classifier); BatchNorm starts at gamma 1, beta 0, mean 0, var 1.
ParameterSet build_model(const NetConfig& config, std::uint64_t seed);

/// Throws a shape error unless names and shapes match the layout exactly.
void check_parameters(const NetConfig& config, const ParameterSet& params);

struct Model {
  NetConfig config;
  ParameterSet params;
};

// N x C x H x W input, already normalized.
struct Batch {
  int n = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  std::size_t sample_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
};

Batch stack(std::span<const Planar> samples);
Batch single(const Planar& sample);

enum class Precision { kFloat32, kFloat64 };

struct Logits {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  std::span<const double> row(int r) const {
    return {values.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }
};

/// Inference-mode forward (BatchNorm uses running statistics).
Logits forward(const NetConfig& config, const ParameterSet& params,
               const Batch& batch, Precision precision = Precision::kFloat32);

struct ForwardCapture {
  std::vector<double> logits;
  // Final-stage output (after the block's ReLU), channels x height x width.
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> last_conv_activations;
  // Global-average-pooled features feeding the classifier.
  std::vector<double> pooled;
};

/// Single-sample inference forward that also exposes the final-stage
/// feature map. Rejects batches with n != 1.
ForwardCapture forward_with_capture(const NetConfig& config,
                                    const ParameterSet& params,
                                    const Batch& sample,
                                    Precision precision = Precision::kFloat32);

/// d(logit[class_index]) / d(last_conv_activations), same layout.
std::vector<double> logit_gradient_wrt_activations(const NetConfig& config,
                                                   const ParameterSet& params,
                                                   const ForwardCapture& capture,
                                                   int class_index);

// Weighted cross-entropy with per-class weights (weighted-mean reduction).
struct LossSpec {
  std::vector<double> class_weights;
};

// Batch mean / unbiased variance observed by each BatchNorm layer during a
// training-mode pass, keyed by layer prefix ("stem.bn", ...).
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> unbiased_var;
};
using BatchStatistics = std::map<std::string, BatchNormStats>;

struct GradientResult {
  double loss = 0.0;
  GradientMap gradients;
  BatchStatistics batch_stats;
};

/// Training-mode forward (batch statistics) plus reverse-mode gradients of
/// the weighted cross-entropy. Pure: running statistics are returned, not
/// applied.
GradientResult gradients(const NetConfig& config, const ParameterSet& params,
                         const Batch& batch, std::span<const int> labels,
                         const LossSpec& loss,
                         Precision precision = Precision::kFloat32);

/// Training-mode loss only; the function gradients() differentiates.
double training_loss(const NetConfig& config, const ParameterSet& params,
                     const Batch& batch, std::span<const int> labels,
                     const LossSpec& loss,
                     Precision precision = Precision::kFloat64);

/// running = (1 - momentum) * running + momentum * batch.
void apply_batch_statistics(ParameterSet& params, const BatchStatistics& stats,
                            double momentum = 0.1);

std::vector<double> softmax(std::span<const double> logits);

// Checkpoint container: "FCNSCKPT", u32 little-endian header length, JSON
// header {format_version, net_config, params: name -> {shape, dtype, offset,
// length}}, then little-endian float32 data. Offsets and lengths are byte
// counts relative to the start of the data section.
inline constexpr char kCheckpointMagic[8] = {'F', 'C', 'N', 'S',
                                             'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace fcns::net
