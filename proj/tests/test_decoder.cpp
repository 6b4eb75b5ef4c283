#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"

using scd::Tensor;
using oracle::Vec;

namespace {

Vec softmax_rows(const Vec& logits, std::size_t classes) {
  Vec p(logits.size());
  for (std::size_t v = 0; v < logits.size() / classes; ++v) {
    double top = -1e300, z = 0;
    for (std::size_t k = 0; k < classes; ++k) top = std::max(top, logits[v * classes + k]);
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(logits[v * classes + k] - top);
    for (std::size_t k = 0; k < classes; ++k) p[v * classes + k] = std::exp(logits[v * classes + k] - top) / z;
  }
  return p;
}

double ce_oracle(const Vec& logits, const std::vector<std::int32_t>& labels, std::size_t classes) {
  const Vec p = softmax_rows(logits, classes);
  double acc = 0;
  for (std::size_t v = 0; v < labels.size(); ++v)
    acc -= std::log(std::clamp(p[v * classes + static_cast<std::size_t>(labels[v])], 1e-7, 1 - 1e-7));
  return acc / static_cast<double>(labels.size());
}

double dice_oracle(const Vec& logits, const std::vector<std::int32_t>& labels, std::size_t classes) {
  const Vec p = softmax_rows(logits, classes);
  double loss = 0;
  for (std::size_t k = 1; k < classes; ++k) {
    double inter = 0, ps = 0, gs = 0;
    for (std::size_t v = 0; v < labels.size(); ++v) {
      const double g = labels[v] == static_cast<std::int32_t>(k);
      inter += p[v * classes + k] * g;
      ps += p[v * classes + k];
      gs += g;
    }
    loss += 1 - (2 * inter + 1e-5) / (ps + gs + 1e-5);
  }
  return loss / static_cast<double>(classes - 1);
}

}  // namespace

TEST(Losses, MatchIndependentFormulas) {
  const std::size_t classes = 3, vox = 4 * 4 * 2;
  const Vec logits = oracle::uniform_values(vox * classes, 3, -3, 3);
  std::vector<std::int32_t> labels(vox);
  for (std::size_t i = 0; i < vox; ++i) labels[i] = static_cast<std::int32_t>((i * 7) % 3);
  const Tensor<double> t({4, 4, 2, classes}, logits);
  EXPECT_NEAR(scd::ce_loss(t, labels).item(), ce_oracle(logits, labels, classes), 1e-12);
  EXPECT_NEAR(scd::dice_loss(t, labels).item(), dice_oracle(logits, labels, classes), 1e-12);
  EXPECT_NEAR(scd::total_loss(t, labels).item(),
              ce_oracle(logits, labels, classes) + dice_oracle(logits, labels, classes), 1e-12);
}

TEST(Losses, UniformLogitsGiveLogK) {
  const std::vector<std::int32_t> labels{0, 1, 2, 3, 1};
  EXPECT_NEAR(scd::ce_loss(Tensor<double>::zeros({5, 1, 1, 4}), labels).item(), std::log(4.0), 1e-12);
}

TEST(Losses, PerfectPredictionNearZero) {
  const std::vector<std::int32_t> labels{0, 1, 2, 2, 1, 0};
  Vec logits(labels.size() * 3, -50.0);
  for (std::size_t v = 0; v < labels.size(); ++v) logits[v * 3 + static_cast<std::size_t>(labels[v])] = 50.0;
  const Tensor<double> t({6, 1, 1, 3}, logits);
  EXPECT_LT(scd::dice_loss(t, labels).item(), 1e-6);
  EXPECT_LT(scd::ce_loss(t, labels).item(), 2e-7);
}

TEST(Losses, ClassAbsentEverywhereIsHarmless) {
  const std::vector<std::int32_t> labels{0, 0, 0, 1};
  Vec logits(4 * 3, 0.0);
  for (std::size_t v = 0; v < 4; ++v) logits[v * 3 + 2] = -60.0;
  const double d = scd::dice_loss(Tensor<double>({4, 1, 1, 3}, logits), labels).item();
  EXPECT_TRUE(std::isfinite(d));
}

TEST(Losses, LabelOutOfRangeIsDataError) {
  EXPECT_THROW(scd::ce_loss(Tensor<double>::zeros({2, 1, 1, 3}), {0, 3}), scd::DataError);
  EXPECT_THROW(scd::ce_loss(Tensor<double>::zeros({2, 1, 1, 3}), {0}), scd::DimensionError);
}

TEST(Losses, GradientMatchesDifferences) {
  const std::vector<std::int32_t> labels{0, 2, 1, 1, 2, 0};
  auto err = oracle::autodiff_vs_fd([&](const auto& in) { return scd::total_loss(in[0], labels); },
                                    {{6, 1, 1, 3}}, {oracle::uniform_values(18, 4, -2, 2)});
  EXPECT_LT(err, 1e-6);
}

TEST(Decoder, OutputMatchesInputExtents) {
  const auto cfg = testcfg::tiny();
  scd::ParamStore<double> store(cfg.seed);
  const auto p = scd::DecoderParams<double>::create(store, cfg);
  const auto grid = cfg.encoder.grid();
  scd::TokenSequence<double> z;
  z.tokens = Tensor<double>({64, 16}, oracle::uniform_values(64 * 16, 1));
  const auto raw = Tensor<double>({16, 16, 16, 1}, oracle::uniform_values(4096, 2));
  const auto logits = scd::decode(z, p, raw, grid);
  EXPECT_EQ(logits.shape(), (scd::Shape{16, 16, 16, 3}));
  EXPECT_EQ(p.up_w.size(), 2u);
  EXPECT_EQ(store.at("decoder.skip.w").shape(), (scd::Shape{27, 1, 4}));
}

TEST(Decoder, TokenCountMustFillGrid) {
  EXPECT_THROW(scd::tokens_to_volume(Tensor<double>::zeros({63, 4}), {4, 4, 4}), scd::DimensionError);
  const auto v = scd::tokens_to_volume(Tensor<double>({8, 1}, {0, 1, 2, 3, 4, 5, 6, 7}), {2, 2, 2});
  EXPECT_EQ(v.shape(), (scd::Shape{2, 2, 2, 1}));
  EXPECT_DOUBLE_EQ(v.data()[5], 5.0);
}

TEST(Decoder, ChannelCountMustMatchStages) {
  auto cfg = testcfg::tiny();
  cfg.decoder.channels = {8, 4};
  scd::ParamStore<double> store;
  EXPECT_THROW(scd::DecoderParams<double>::create(store, cfg), scd::ConfigError);
}
