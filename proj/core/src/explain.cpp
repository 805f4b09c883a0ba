#include "fcns/explain.hpp"

#include <algorithm>
#include <cmath>

#include "fcns/error.hpp"

namespace fcns::explain {

bool Heatmap::degenerate() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

void OverlayConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    raise(ErrorKind::kRange, "alpha must be in [0, 1], got " + std::to_string(alpha));
  }
}

Heatmap cam_from_activations(std::span<const double> activations,
                             std::span<const double> gradients, int channels,
                             int height, int width, int out_height,
                             int out_width, int class_index) {
  const auto plane = static_cast<std::size_t>(height) * width;
  if (channels < 1 || plane == 0 || activations.size() != channels * plane ||
      gradients.size() != activations.size()) {
    raise(ErrorKind::kShape, "activation and gradient sizes do not match " +
                                 std::to_string(channels) + "x" +
                                 std::to_string(height) + "x" + std::to_string(width));
  }
  if (out_height < 1 || out_width < 1) raise(ErrorKind::kShape, "empty heatmap size");

  std::vector<double> raw(plane, 0.0);
  for (int k = 0; k < channels; ++k) {
    const auto g = gradients.subspan(k * plane, plane);
    double alpha = 0.0;
    for (double v : g) alpha += v;
    alpha /= static_cast<double>(plane);
    const auto a = activations.subspan(k * plane, plane);
    for (std::size_t i = 0; i < plane; ++i) raw[i] += alpha * a[i];
  }
  std::vector<float> rect(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    rect[i] = static_cast<float>(std::max(0.0, raw[i]));
  }
  const auto up = resize_plane_bilinear(rect, height, width, out_height, out_width);

  Heatmap h;
  h.height = out_height;
  h.width = out_width;
  h.source_height = height;
  h.source_width = width;
  h.class_index = class_index;
  const auto [lo, hi] = std::minmax_element(up.begin(), up.end());
  const double min = *lo;
  const double max = *hi;
  h.values.assign(up.size(), 0.0);
  if (max > min) {
    for (std::size_t i = 0; i < up.size(); ++i) {
      h.values[i] = (static_cast<double>(up[i]) - min) / (max - min);
    }
  }
  return h;
}

Heatmap grad_cam(const net::Model& model, const Planar& input, int class_index) {
  if (class_index < 0 || class_index >= model.config.num_classes) {
    raise(ErrorKind::kLabel, "class index " + std::to_string(class_index) +
                                 " outside [0, " +
                                 std::to_string(model.config.num_classes) + ")");
  }
  const auto capture =
      net::forward_with_capture(model.config, model.params, net::single(input));
  const auto grads = net::logit_gradient_wrt_activations(model.config, model.params,
                                                         capture, class_index);
  return cam_from_activations(capture.last_conv_activations, grads, capture.channels,
                              capture.height, capture.width, input.height,
                              input.width, class_index);
}

std::array<std::uint8_t, 3> jet(double value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    raise(ErrorKind::kRange, "heatmap value " + std::to_string(value) +
                                 " outside [0, 1]");
  }
  auto byte = [](double c) {
    c = std::clamp(c, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * c));
  };
  const double v4 = 4.0 * value;
  return {byte(v4 - 2.0), byte(2.0 - std::abs(v4 - 2.0)), byte(2.0 - v4)};
}

Image colorize(const Heatmap& heatmap, const OverlayConfig& config) {
  config.validate();
  Image out(heatmap.width, heatmap.height, 3);
  for (int y = 0; y < heatmap.height; ++y) {
    for (int x = 0; x < heatmap.width; ++x) {
      const auto rgb = jet(heatmap.at(y, x));
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
    }
  }
  return out;
}

Image overlay(const Image& original, const Image& colorized, double alpha) {
  OverlayConfig{alpha}.validate();
  if (original.width != colorized.width || original.height != colorized.height ||
      colorized.channels != 3) {
    raise(ErrorKind::kShape,
          "overlay size mismatch: " + std::to_string(original.width) + "x" +
              std::to_string(original.height) + " vs " +
              std::to_string(colorized.width) + "x" + std::to_string(colorized.height));
  }
  const Image base = original.channels == 3 ? original : to_rgb(original);
  Image out(base.width, base.height, 3);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = (1.0 - alpha) * base.pixels[i] + alpha * colorized.pixels[i];
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

Explanation explain_image(const net::Model& model, const Image& image,
                          std::optional<int> class_index,
                          const OverlayConfig& config,
                          const corpus::PreprocessConfig& preprocess) {
  config.validate();
  const auto input = corpus::eval_transform(image, preprocess);
  Explanation e;
  const auto logits = net::forward(model.config, model.params, net::single(input));
  e.probabilities = net::softmax(logits.row(0));
  int cls = 0;
  if (class_index) {
    cls = *class_index;
  } else {
    for (int c = 1; c < logits.cols; ++c) {
      if (e.probabilities[c] > e.probabilities[cls]) cls = c;
    }
  }
  e.heatmap = grad_cam(model, input, cls);
  e.original = corpus::to_image(corpus::denormalize(input, preprocess));
  e.cam = colorize(e.heatmap, config);
  e.overlay = overlay(e.original, e.cam, config.alpha);
  return e;
}

void write_triptych(const std::filesystem::path& out_dir,
                    const std::string& sample_id,
                    const Explanation& explanation) {
  std::filesystem::create_directories(out_dir);
  write_png(out_dir / (sample_id + ".orig.png"), explanation.original);
  write_png(out_dir / (sample_id + ".cam.png"), explanation.cam);
  write_png(out_dir / (sample_id + ".overlay.png"), explanation.overlay);
}

}  // namespace fcns::explain
