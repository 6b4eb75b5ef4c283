#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"

TEST(Tiles, StartsCoverVolume) {
  EXPECT_EQ(scd::tile_starts(32, 32, 0.5), (std::vector<std::size_t>{0}));
  EXPECT_EQ(scd::tile_starts(48, 32, 0.5), (std::vector<std::size_t>{0, 16}));
  EXPECT_EQ(scd::tile_starts(40, 32, 0.5), (std::vector<std::size_t>{0, 8}));
  EXPECT_EQ(scd::tile_starts(64, 32, 0.5), (std::vector<std::size_t>{0, 16, 32}));
  EXPECT_EQ(scd::tile_starts(64, 32, 0.0), (std::vector<std::size_t>{0, 32}));
  EXPECT_THROW(scd::tile_starts(16, 32, 0.5), scd::ConfigError);
}

TEST(SlidingWindow, SingleTileEqualsForward) {
  const auto cfg = testcfg::tiny();
  scd::ScdModel<float> model(cfg);
  const auto v = scd::generate_synthetic(1, cfg.encoder.extents, cfg.decoder.num_classes);
  const auto res = scd::sliding_window_infer(model, v, cfg.infer.window, 0.5);
  EXPECT_EQ(res.tiles, 1u);
  scd::NoGradGuard guard;
  const auto logits = model.forward(v).logits;
  const std::size_t k = cfg.decoder.num_classes;
  for (std::size_t vox = 0; vox < v.voxels(); vox += 97) {
    double top = -1e30, z = 0;
    for (std::size_t c = 0; c < k; ++c) top = std::max<double>(top, logits.data()[vox * k + c]);
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits.data()[vox * k + c] - top);
    for (std::size_t c = 0; c < k; ++c)
      EXPECT_NEAR(res.probabilities[vox * k + c], std::exp(logits.data()[vox * k + c] - top) / z, 1e-5);
  }
}

TEST(SlidingWindow, OverlappingTilesDeterministic) {
  const auto cfg = testcfg::tiny();
  scd::ScdModel<float> model(cfg);
  const auto v = scd::generate_synthetic(2, {24, 16, 32}, cfg.decoder.num_classes);
  const auto a = scd::sliding_window_infer(model, v, cfg.infer.window, 0.5);
  const auto b = scd::sliding_window_infer(model, v, cfg.infer.window, 0.5);
  EXPECT_EQ(a.tiles, 2u * 1 * 3);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.probabilities, b.probabilities);
  for (std::size_t vox = 0; vox < v.voxels(); vox += 131) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += a.probabilities[vox * 3 + c];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(SlidingWindow, WindowMustMatchModel) {
  const auto cfg = testcfg::tiny();
  scd::ScdModel<float> model(cfg);
  const auto v = scd::generate_synthetic(1, {32, 32, 32}, 3);
  EXPECT_THROW(scd::sliding_window_infer(model, v, {32, 32, 32}, 0.5), scd::ConfigError);
  const auto small = scd::generate_synthetic(1, {8, 16, 16}, 3);
  EXPECT_THROW(scd::sliding_window_infer(model, small, cfg.infer.window, 0.5), scd::ConfigError);
}
