#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "oracle.hpp"

namespace {

std::vector<std::vector<float>> snapshot(const scd::ParamStore<float>& s) {
  std::vector<std::vector<float>> out;
  for (const auto& t : s.tensors()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

}  // namespace

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  scd::ParamStore<double> store;
  auto w = store.add("w", {2, 2}, {scd::Init::Ones});
  auto b = store.add("b", {2}, {scd::Init::Ones});
  scd::TrainConfig tc;
  tc.lr = 0.1;
  tc.weight_decay = 0.5;
  scd::AdamW<double> opt(store, tc, {1.0, 0.5});
  scd::add(scd::sum_all(scd::scale(w, 3.0)), scd::sum_all(scd::scale(b, -2.0))).backward();
  opt.step();
  // m/sqrt(v) = sign(g) after bias correction on the first step.
  EXPECT_NEAR(w.data()[0], 1.0 - 0.1 * 0.5 * 1.0 - 0.1, 1e-7);
  EXPECT_NEAR(b.data()[0], 1.0 + 0.05, 1e-7);
}

TEST(Optimizer, SgdIsPlainGradientStep) {
  scd::ParamStore<double> store;
  auto w = store.add("w", {3}, {scd::Init::Ones});
  scd::TrainConfig tc;
  tc.optimizer = "sgd";
  tc.lr = 0.25;
  scd::AdamW<double> opt(store, tc, {1.0});
  scd::sum_all(scd::mul(w, w)).backward();
  opt.step();
  EXPECT_DOUBLE_EQ(w.data()[1], 1.0 - 0.25 * 2.0);
}

TEST(Optimizer, LayerDecayScales) {
  const auto cfg = testcfg::tiny();
  scd::ScdModel<float> model(cfg);
  const auto scales = scd::layer_decay_scales(model);
  const auto& names = model.params().names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double expect = std::pow(0.75, 5.0 - static_cast<double>(model.layer_id(names[i])));
    EXPECT_DOUBLE_EQ(scales[i], expect) << names[i];
  }
}

TEST(Schedule, EpochsOverrideSteps) {
  scd::TrainConfig t;
  EXPECT_EQ(scd::total_steps(t), 300u);
  t.epochs = 3;
  t.dataset_size = 5;
  t.batch_size = 2;
  EXPECT_EQ(scd::total_steps(t), 9u);
}

TEST(Training, LossDecreases) {
  auto cfg = testcfg::tiny(0.5);
  cfg.train.steps = 40;
  scd::ScdModel<float> model(cfg);
  const auto data = scd::make_dataset(cfg);
  const auto res = scd::train(model, data);
  ASSERT_EQ(res.losses.size(), 40u);
  const double head = std::accumulate(res.losses.begin(), res.losses.begin() + 5, 0.0);
  const double tail = std::accumulate(res.losses.end() - 5, res.losses.end(), 0.0);
  EXPECT_LT(tail, head);
  EXPECT_TRUE(res.report.mean_dsc.has_value());
}

TEST(Training, BitwiseReproducible) {
  auto cfg = testcfg::tiny(0.5);
  cfg.train.steps = 6;
  scd::ScdModel<float> a(cfg), b(cfg);
  const auto data = scd::make_dataset(cfg);
  const auto ra = scd::train(a, data), rb = scd::train(b, data);
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(snapshot(a.params()), snapshot(b.params()));
}

TEST(Training, FreezeLeavesParametersUntouched) {
  auto cfg = testcfg::tiny(0.5);
  cfg.train.steps = 3;
  cfg.train.freeze = true;
  scd::ScdModel<float> model(cfg);
  const auto before = snapshot(model.params());
  scd::train(model, scd::make_dataset(cfg));
  EXPECT_EQ(snapshot(model.params()), before);
}

TEST(Training, NonFiniteLossAborts) {
  auto cfg = testcfg::tiny(0.5);
  cfg.train.steps = 2;
  scd::ScdModel<float> model(cfg);
  model.params().at("decoder.head.b").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    scd::train(model, scd::make_dataset(cfg));
    FAIL() << "expected TrainingError";
  } catch (const scd::TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("STP1"), std::string::npos);
  }
}

TEST(Training, WarmupAndSinkHook) {
  auto cfg = testcfg::tiny(0.5);
  cfg.train.steps = 4;
  cfg.train.prune_warmup_steps = 2;
  scd::ScdModel<float> model(cfg);
  std::vector<std::size_t> seen;
  scd::train(model, scd::make_dataset(cfg), [&](std::size_t s, double) { seen.push_back(s); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Dataset, SeedsAreIndependentOfSize) {
  auto cfg = testcfg::tiny();
  const auto small = scd::make_dataset(cfg);
  cfg.train.dataset_size = 6;
  const auto big = scd::make_dataset(cfg);
  EXPECT_EQ(small.train[1].labels, big.train[1].labels);
  EXPECT_EQ(small.eval[0].labels, big.eval[0].labels);
  EXPECT_NE(small.train[0].labels, small.eval[0].labels);
}
