#include <cmath>

#include <gtest/gtest.h>

#include "fcns/error.hpp"
#include "fcns/explain.hpp"
#include "fcns/rng.hpp"
#include "test_support.hpp"

namespace fcns::explain {
namespace {

using testing::throws_kind;

TEST(Cam, WeightedSumReluAndNormalize) {
  // alpha = (0.5, -0.25); raw = 0.5 A0 - 0.25 A1 = (-0.5, 0.25, 1, 1.75)
  const std::vector<double> acts{1, 2, 3, 4, 4, 3, 2, 1};
  const std::vector<double> grads{0.5, 0.5, 0.5, 0.5, -1, 0, 0, 0};
  const auto h = cam_from_activations(acts, grads, 2, 2, 2, 2, 2, 3);
  ASSERT_EQ(h.values.size(), 4u);
  EXPECT_NEAR(h.values[0], 0.0, 1e-7);
  EXPECT_NEAR(h.values[1], 1.0 / 7.0, 1e-7);
  EXPECT_NEAR(h.values[2], 4.0 / 7.0, 1e-7);
  EXPECT_NEAR(h.values[3], 1.0, 1e-7);
  EXPECT_EQ(h.class_index, 3);
  EXPECT_EQ(h.source_height, 2);
}

TEST(Cam, UpsamplesAndStaysInUnitRange) {
  Rng rng(3);
  std::vector<double> acts(4 * 5 * 6), grads(acts.size());
  for (auto& a : acts) a = std::max(0.0, rng.normal());
  for (auto& g : grads) g = rng.normal();
  const auto h = cam_from_activations(acts, grads, 4, 5, 6, 40, 48);
  EXPECT_EQ(h.height, 40);
  EXPECT_EQ(h.width, 48);
  double lo = 1.0, hi = 0.0;
  for (double v : h.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(Cam, NegativeEverywhereIsDegenerate) {
  const std::vector<double> acts{1, 1, 1, 1};
  const std::vector<double> grads{-1, -1, -1, -1};
  const auto h = cam_from_activations(acts, grads, 1, 2, 2, 8, 8);
  EXPECT_TRUE(h.degenerate());
  EXPECT_TRUE(throws_kind([&] { cam_from_activations(acts, grads, 2, 2, 2, 8, 8); },
                          ErrorKind::kShape));
}

TEST(GradCam, ActivationGradientIsClassifierRowOverArea) {
  net::Model model{net::NetConfig::desk(5), {}};
  model.params = net::build_model(model.config, 9);
  Rng rng(4);
  Planar input(3, 64, 72);
  for (auto& v : input.values) v = static_cast<float>(rng.normal());
  const auto capture = net::forward_with_capture(model.config, model.params, net::single(input));
  const int cls = 2;
  const auto grads = net::logit_gradient_wrt_activations(model.config, model.params, capture, cls);
  const auto& fc = model.params.at("fc.weight").values;
  const int k = capture.channels;
  const double area = static_cast<double>(capture.height) * capture.width;
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < capture.height * capture.width; ++i) {
      ASSERT_NEAR(grads[c * capture.height * capture.width + i], fc[cls * k + c] / area, 1e-12);
    }
  }
  const auto h = grad_cam(model, input, cls);
  const auto expected = cam_from_activations(capture.last_conv_activations, grads, k,
                                             capture.height, capture.width, 64, 72, cls);
  EXPECT_EQ(h.values, expected.values);
  EXPECT_TRUE(throws_kind([&] { grad_cam(model, input, 5); }, ErrorKind::kLabel));
}

TEST(Jet, Endpoints) {
  EXPECT_EQ(jet(0.0), (std::array<std::uint8_t, 3>{0, 0, 255}));
  EXPECT_EQ(jet(0.25), (std::array<std::uint8_t, 3>{0, 255, 255}));
  EXPECT_EQ(jet(0.5), (std::array<std::uint8_t, 3>{0, 255, 0}));
  EXPECT_EQ(jet(0.75), (std::array<std::uint8_t, 3>{255, 255, 0}));
  EXPECT_EQ(jet(1.0), (std::array<std::uint8_t, 3>{255, 0, 0}));
  EXPECT_EQ(jet(0.375), (std::array<std::uint8_t, 3>{0, 255, 128}));
  EXPECT_TRUE(throws_kind([] { jet(1.5); }, ErrorKind::kRange));
  EXPECT_TRUE(throws_kind([] { jet(std::nan("")); }, ErrorKind::kRange));
}

Image noise_image(Rng& rng, int w, int h, int c) {
  Image img(w, h, c);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

TEST(Overlay, AlphaEndpointsAreExact) {
  Rng rng(8);
  const auto original = noise_image(rng, 17, 13, 3);
  const auto cam = noise_image(rng, 17, 13, 3);
  EXPECT_EQ(overlay(original, cam, 0.0), original);
  EXPECT_EQ(overlay(original, cam, 1.0), cam);

  const auto gray = noise_image(rng, 17, 13, 1);
  const auto blended = overlay(gray, cam, 0.0);
  for (int y = 0; y < 13; ++y) {
    for (int x = 0; x < 17; ++x) {
      for (int c = 0; c < 3; ++c) ASSERT_EQ(blended.at(x, y, c), gray.at(x, y));
    }
  }
}

TEST(Overlay, InteriorAlphaRoundsBlend) {
  Rng rng(9);
  const auto original = noise_image(rng, 9, 7, 3);
  const auto cam = noise_image(rng, 9, 7, 3);
  const double alpha = 0.35;
  const auto out = overlay(original, cam, alpha);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = 0.65 * original.pixels[i] + 0.35 * cam.pixels[i];
    ASSERT_LE(std::abs(out.pixels[i] - v), 0.5 + 1e-9);
  }
  EXPECT_TRUE(throws_kind([&] { overlay(original, cam, 1.01); }, ErrorKind::kRange));
  EXPECT_TRUE(throws_kind([&] { overlay(original, noise_image(rng, 8, 7, 3), 0.5); },
                          ErrorKind::kShape));
}

TEST(ExplainImage, ProducesAlignedTriptych) {
  net::Model model{net::NetConfig::desk(5), {}};
  model.params = net::build_model(model.config, 2);
  const auto image = testing::gradient_image(150, 130, 1);
  corpus::PreprocessConfig pre;
  pre.target_size = 64;
  const auto e = explain_image(model, image, std::nullopt, {}, pre);
  EXPECT_EQ(e.heatmap.width, 64);
  EXPECT_EQ(e.heatmap.height, 64);
  EXPECT_EQ(e.original.width, 64);
  EXPECT_EQ(e.cam.channels, 3);
  EXPECT_EQ(e.overlay.width, 64);
  double sum = 0.0;
  for (double p : e.probabilities) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-12);

  testing::TempDir dir;
  write_triptych(dir.path(), "case1", e);
  EXPECT_EQ(read_png(dir / "case1.cam.png"), e.cam);
  EXPECT_EQ(read_png(dir / "case1.overlay.png"), e.overlay);
  EXPECT_TRUE(std::filesystem::exists(dir / "case1.orig.png"));
}

}  // namespace
}  // namespace fcns::explain
