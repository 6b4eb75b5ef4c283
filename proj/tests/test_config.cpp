#include <gtest/gtest.h>

#include "oracle.hpp"

using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    scd::parse_config(j);
  } catch (const scd::ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const auto cfg = scd::parse_config(json::object());
  EXPECT_EQ(cfg.encoder.extents, (scd::Extents{32, 32, 32}));
  EXPECT_DOUBLE_EQ(cfg.encoder.r, 0.5);
  EXPECT_EQ(cfg.encoder.depth, 12u);
  EXPECT_EQ(cfg.encoder.dim, 64u);
  EXPECT_EQ(cfg.encoder.heads, 4u);
  EXPECT_EQ(cfg.encoder.patch, 8u);
  EXPECT_EQ(cfg.encoder.stp_after, (std::vector<std::size_t>{3, 6, 9}));
  EXPECT_EQ(cfg.encoder.num_tokens(), 64u);
  EXPECT_EQ(cfg.token_chain(), (std::vector<std::size_t>{64, 32, 16, 8}));
  EXPECT_EQ(cfg.train.steps, 300u);
  EXPECT_EQ(cfg.train.batch_size, 2u);
  EXPECT_DOUBLE_EQ(cfg.infer.overlap, 0.5);
}

TEST(Config, UnknownKeysNamed) {
  EXPECT_NE(config_error({{"encoder", {{"ratio", 0.3}}}}).find("encoder.ratio"), std::string::npos);
  EXPECT_NE(config_error({{"bogus", 1}}).find("bogus"), std::string::npos);
}

TEST(Config, TypeErrorsNamed) {
  EXPECT_NE(config_error({{"encoder", {{"depth", "twelve"}}}}).find("encoder.depth"), std::string::npos);
  EXPECT_NE(config_error({{"encoder", {{"perturb", 1}}}}).find("encoder.perturb"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"steps", -3}}}}).find("train.steps"), std::string::npos);
}

TEST(Config, InvariantsNamed) {
  EXPECT_NE(config_error({{"encoder", {{"r", 1.0}}}}).find("encoder.r"), std::string::npos);
  EXPECT_NE(config_error({{"encoder", {{"tau", 0.0}}}}).find("encoder.tau"), std::string::npos);
  EXPECT_NE(config_error({{"encoder", {{"stp_after", {0}}}}}).find("encoder.stp_after"), std::string::npos);
  EXPECT_NE(config_error({{"encoder", {{"stp_after", {6, 3}}}}}).find("encoder.stp_after"), std::string::npos);
  EXPECT_NE(config_error({{"encoder", {{"heads", 5}}}}).find("encoder.heads"), std::string::npos);
  EXPECT_NE(config_error({{"encoder", {{"extents", 30}}}}).find("encoder.extents"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"lr", 0}}}}).find("train.lr"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"layer_decay", 1.5}}}}).find("train.layer_decay"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"optimizer", "lbfgs"}}}}).find("train.optimizer"), std::string::npos);
  // 64 -> 6 -> 1 -> 0 tokens
  EXPECT_NE(config_error({{"encoder", {{"r", 0.9}}}}).find("keep zero"), std::string::npos);
}

TEST(Config, RoundTripThroughJson) {
  json j{{"encoder", {{"r", 0.25}, {"tau", 0.1}, {"perturb", false}, {"extents", {16, 32, 16}}, {"patch", 8}}},
         {"seed", 9}};
  const auto a = scd::parse_config(j);
  const auto b = scd::parse_config(scd::to_json(a));
  EXPECT_EQ(scd::to_json(a), scd::to_json(b));
  EXPECT_EQ(b.encoder.extents, (scd::Extents{16, 32, 16}));
  EXPECT_FALSE(b.encoder.perturb);
  EXPECT_EQ(b.seed, 9u);
}

TEST(Config, OverridesParseValues) {
  json j = json::object();
  scd::apply_override(j, "encoder.r=0.25");
  scd::apply_override(j, "train.optimizer=sgd");
  scd::apply_override(j, "encoder.stp_after=[2,4,6]");
  const auto cfg = scd::parse_config(j);
  EXPECT_DOUBLE_EQ(cfg.encoder.r, 0.25);
  EXPECT_EQ(cfg.train.optimizer, "sgd");
  EXPECT_EQ(cfg.encoder.stp_after, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_THROW(scd::apply_override(j, "no_equals"), scd::ConfigError);
  EXPECT_THROW(scd::apply_override(j, "a..b=1"), scd::ConfigError);
}

TEST(Config, PatchSizeSetsDecoderLadder) {
  const auto cfg = scd::parse_config({{"encoder", {{"patch", 4}, {"extents", 16}}}, {"infer", {{"window", 16}}}});
  EXPECT_EQ(cfg.decoder.channels.size(), 3u);
  EXPECT_EQ(cfg.decoder_stages(), 2u);
}

TEST(Config, MissingFileIsConfigError) {
  EXPECT_THROW(scd::parse_config_file("/nonexistent/config.json"), scd::ConfigError);
}
