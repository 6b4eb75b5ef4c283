#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"

using scd::Tensor;
using oracle::Vec;

namespace {

scd::PruneRecord<double> record(std::size_t stp, std::vector<std::int64_t> pruned, std::size_t c, std::uint64_t seed) {
  scd::PruneRecord<double> r;
  r.stp_index = stp;
  r.pruned_positions = std::move(pruned);
  r.pruned_tokens = Tensor<double>({r.pruned_positions.size(), c}, oracle::uniform_values(r.pruned_positions.size() * c, seed));
  return r;
}

scd::TokenSequence<double> body(std::vector<std::int64_t> positions, std::size_t c, std::uint64_t seed) {
  scd::TokenSequence<double> z;
  z.tokens = Tensor<double>({positions.size(), c}, oracle::uniform_values(positions.size() * c, seed));
  z.positions = std::move(positions);
  return z;
}

std::vector<Tensor<double>> block_tokens(std::size_t count, std::size_t c) {
  std::vector<Tensor<double>> out;
  for (std::size_t k = 0; k < count; ++k) out.emplace_back(scd::Shape{c}, Vec(c, 100.0 * static_cast<double>(k + 1)));
  return out;
}

}  // namespace

TEST(SinCos, MatchesClosedForm) {
  const auto e = scd::sincos_pos_embed<double>(5, 8);
  ASSERT_EQ(e.shape(), (scd::Shape{5, 8}));
  for (std::size_t p = 0; p < 5; ++p)
    for (std::size_t j = 0; j < 4; ++j) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(j) / 8.0);
      EXPECT_NEAR(e.data()[p * 8 + 2 * j], std::sin(angle), 1e-14);
      EXPECT_NEAR(e.data()[p * 8 + 2 * j + 1], std::cos(angle), 1e-14);
    }
  EXPECT_THROW(scd::sincos_pos_embed<double>(4, 7), scd::ConfigError);
}

TEST(Assemble, ScattersToGridOrder) {
  const std::size_t c = 3;
  const std::vector<scd::PruneRecord<double>> recs{record(1, {4, 1}, c, 1), record(2, {3}, c, 2)};
  const auto last = body({0, 2, 5}, c, 3);
  const auto blk = block_tokens(2, c);
  const auto out = scd::assemble(recs, last, 6, blk);
  ASSERT_EQ(out.tokens.shape(), (scd::Shape{6, c}));
  EXPECT_EQ(out.positions, (std::vector<std::int64_t>{0, 1, 2, 3, 4, 5}));
  auto row = [&](std::size_t p, std::size_t j) { return out.tokens.data()[p * c + j]; };
  for (std::size_t j = 0; j < c; ++j) {
    EXPECT_DOUBLE_EQ(row(4, j), recs[0].pruned_tokens.data()[j] + 100.0);
    EXPECT_DOUBLE_EQ(row(1, j), recs[0].pruned_tokens.data()[c + j] + 100.0);
    EXPECT_DOUBLE_EQ(row(3, j), recs[1].pruned_tokens.data()[j] + 200.0);
    EXPECT_DOUBLE_EQ(row(0, j), last.tokens.data()[j]);
    EXPECT_DOUBLE_EQ(row(5, j), last.tokens.data()[2 * c + j]);
  }
}

TEST(Assemble, OverlapOrGapIsAssemblyError) {
  const std::size_t c = 2;
  const auto blk = block_tokens(1, c);
  EXPECT_THROW(scd::assemble({record(1, {1, 2}, c, 1)}, body({0, 2, 3}, c, 2), 4, blk), scd::AssemblyError);
  EXPECT_THROW(scd::assemble({record(1, {1}, c, 1)}, body({0, 3}, c, 2), 4, blk), scd::AssemblyError);
  EXPECT_THROW(scd::assemble({record(1, {7}, c, 1)}, body({0, 1, 2}, c, 2), 4, blk), scd::AssemblyError);
  try {
    scd::assemble({record(1, {1}, c, 1)}, body({0, 3}, c, 2), 4, blk);
  } catch (const scd::AssemblyError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(Assemble, RejectsClsAndMissingBlockToken) {
  auto last = body({0, 1}, 2, 1);
  last.has_cls = true;
  EXPECT_THROW(scd::assemble({}, last, 2, block_tokens(1, 2)), scd::ContractError);
  EXPECT_THROW(scd::assemble({record(1, {1}, 2, 1), record(2, {2}, 2, 1)}, body({0}, 2, 1), 3, block_tokens(1, 2)),
               scd::ContractError);
}

TEST(Assemble, GradientsReachAllSources) {
  const std::size_t c = 2;
  const Vec w = oracle::uniform_values(5 * c, 9);
  auto err = oracle::autodiff_vs_fd(
      [&](const std::vector<Tensor<double>>& in) {
        scd::PruneRecord<double> r;
        r.stp_index = 1;
        r.pruned_positions = {3, 0};
        r.pruned_tokens = in[0];
        scd::TokenSequence<double> last{in[1], {1, 2, 4}, false};
        const auto out = scd::assemble({r}, last, 5, {in[2]});
        return scd::sum_all(scd::mul(scd::gelu(out.tokens), Tensor<double>({5, c}, w)));
      },
      {{2, c}, {3, c}, {c}}, {oracle::uniform_values(4, 1), oracle::uniform_values(6, 2), oracle::uniform_values(2, 3)});
  EXPECT_LT(err, 1e-5);
}

TEST(Complete, WithoutBlocksAddsPositions) {
  scd::ParamStore<double> store;
  const auto p = scd::MtaParams<double>::create(store, 1, 0, 4, 6, 2);
  const auto z = body({0, 1, 2, 3}, 6, 5);
  const auto out = scd::complete(z, p, 1e-6);
  for (std::size_t i = 0; i < 24; ++i)
    EXPECT_DOUBLE_EQ(out.tokens.data()[i], z.tokens.data()[i] + p.pos_embed.data()[i]);
  EXPECT_THROW(scd::complete(body({0, 1}, 6, 1), p, 1e-6), scd::DimensionError);
}

TEST(Complete, ParameterNames) {
  scd::ParamStore<double> store;
  scd::MtaParams<double>::create(store, 3, 2, 8, 8, 2);
  EXPECT_TRUE(store.contains("mta.blk.1"));
  EXPECT_TRUE(store.contains("mta.blk.3"));
  EXPECT_TRUE(store.contains("mta.blocks.1.attn.q.w"));
}
