#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcns/corpus.hpp"
#include "fcns/image.hpp"
#include "fcns/net.hpp"

namespace fcns::explain {

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major, [0, 1]
  int source_height = 0;       // feature-map resolution before upsampling
  int source_width = 0;
  int class_index = 0;

  double at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  bool degenerate() const;
};

enum class Colormap { kJet };

struct OverlayConfig {
  double alpha = 0.35;
  Colormap colormap = Colormap::kJet;

  void validate() const;
};

/// Channel weights are the spatial means of `gradients`; the map is
/// ReLU(sum_k weight_k * A_k), bilinearly resized to out_height x
/// out_width and min-max normalized. A constant map becomes all zeros.
Heatmap cam_from_activations(std::span<const double> activations,
                             std::span<const double> gradients, int channels,
                             int height, int width, int out_height,
                             int out_width, int class_index = 0);

/// Grad-CAM of the final-stage output for `class_index`, using the
/// pre-softmax logit. `input` is an eval-transformed 3 x H x W tensor.
Heatmap grad_cam(const net::Model& model, const Planar& input, int class_index);

/// Piecewise-linear jet:
///   r = clamp(4v - 2), g = clamp(2 - |4v - 2|), b = clamp(2 - 4v),
/// each channel rounded as round(255 * c). 0 is blue, 0.5 green, 1 red.
std::array<std::uint8_t, 3> jet(double value);

Image colorize(const Heatmap& heatmap, const OverlayConfig& config = {});

/// round((1 - alpha) * original + alpha * colorized) per channel. A gray
/// original is expanded to RGB first.
Image overlay(const Image& original, const Image& colorized, double alpha);

struct Explanation {
  Heatmap heatmap;
  std::vector<double> probabilities;
  Image original;  // the eval crop, back in pixel units
  Image cam;
  Image overlay;
};

/// Full pipeline on a raw image; explains the predicted class unless one
/// is given.
Explanation explain_image(const net::Model& model, const Image& image,
                          std::optional<int> class_index = std::nullopt,
                          const OverlayConfig& config = {},
                          const corpus::PreprocessConfig& preprocess = {});

/// Writes <sample_id>.orig.png, <sample_id>.cam.png, <sample_id>.overlay.png.
void write_triptych(const std::filesystem::path& out_dir,
                    const std::string& sample_id,
                    const Explanation& explanation);

}  // namespace fcns::explain
