#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracle.hpp"

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("scd_test_" + name)).string();
}

}  // namespace

TEST(ParamStore, InitDependsOnlyOnSeedAndName) {
  scd::ParamStore<double> a(4), b(4);
  a.add("x", {3, 3}, {scd::Init::Normal, 0.5});
  const auto wa = a.add("w", {4, 2}, {scd::Init::Normal, 0.5});
  const auto wb = b.add("w", {4, 2}, {scd::Init::Normal, 0.5});
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(wa.data()[i], wb.data()[i]);
  scd::ParamStore<double> c(5);
  const auto wc = c.add("w", {4, 2}, {scd::Init::Normal, 0.5});
  EXPECT_NE(wa.data()[0], wc.data()[0]);
}

TEST(ParamStore, KindsAndDuplicates) {
  scd::ParamStore<double> s(1);
  const auto ones = s.add("g", {3}, {scd::Init::Ones});
  const auto zeros = s.add("b", {3}, {scd::Init::Zeros});
  EXPECT_DOUBLE_EQ(ones.data()[2], 1.0);
  EXPECT_DOUBLE_EQ(zeros.data()[0], 0.0);
  EXPECT_TRUE(ones.requires_grad());
  EXPECT_EQ(s.count(), 6u);
  EXPECT_THROW(s.add("g", {3}, {}), scd::ContractError);
  EXPECT_THROW(s.at("missing"), scd::ContractError);
}

TEST(ParamStore, KaimingScale) {
  scd::ParamStore<double> s(2);
  const auto w = s.add("w", {200, 100}, {scd::Init::Kaiming, 0, 50});
  double var = 0;
  for (double v : w.data()) var += v * v / static_cast<double>(w.size());
  EXPECT_NEAR(var, 2.0 / 50, 0.002);
}

TEST(Checkpoint, RoundTrip) {
  const auto cfg = testcfg::tiny();
  scd::ScdModel<float> a(cfg);
  for (auto& t : a.params().tensors())
    for (auto& v : t.mutable_data()) v += 0.125f;
  const auto path = temp_path("roundtrip.ckpt");
  scd::save_checkpoint(path, a.params());
  auto other = cfg;
  other.seed = 99;
  scd::ScdModel<float> b(other);
  scd::load_checkpoint(path, b.params());
  for (std::size_t i = 0; i < a.params().tensors().size(); ++i) {
    const auto da = a.params().tensors()[i].data(), db = b.params().tensors()[i].data();
    ASSERT_TRUE(std::equal(da.begin(), da.end(), db.begin())) << a.params().names()[i];
  }
  std::remove(path.c_str());
}

TEST(Checkpoint, HeaderLayout) {
  scd::ParamStore<float> s;
  s.add("ab", {2}, {scd::Init::Ones});
  const auto path = temp_path("layout.ckpt");
  scd::save_checkpoint(path, s);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  // magic 8, version 4, count 4, name_len 4, name 2, rank 4, dim 8, offset 8, payload 2*4
  ASSERT_EQ(bytes.size(), 8u + 4 + 4 + 4 + 2 + 4 + 8 + 8 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 7), "SCDCKPT");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[16], 2);
  EXPECT_EQ(bytes[20], 'a');
  std::remove(path.c_str());
}

TEST(Checkpoint, RejectsMismatches) {
  const auto path = temp_path("mismatch.ckpt");
  scd::ParamStore<float> s;
  s.add("w", {2, 2}, {scd::Init::Ones});
  scd::save_checkpoint(path, s);

  scd::ParamStore<float> wrong_shape;
  wrong_shape.add("w", {4}, {});
  EXPECT_THROW(scd::load_checkpoint(path, wrong_shape), scd::FileError);
  scd::ParamStore<float> wrong_name;
  wrong_name.add("v", {2, 2}, {});
  EXPECT_THROW(scd::load_checkpoint(path, wrong_name), scd::FileError);

  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(scd::load_checkpoint(path, s), scd::FileError);
  EXPECT_THROW(scd::load_checkpoint(temp_path("does_not_exist"), s), scd::FileError);
  std::remove(path.c_str());
}

TEST(ParamStore, CopyAcrossPrecision) {
  const auto cfg = testcfg::tiny();
  scd::ScdModel<float> f(cfg);
  scd::ScdModel<double> d(cfg);
  d.params().copy_from(f.params());
  EXPECT_EQ(static_cast<float>(d.params().at("blocks.0.attn.q.w").data()[3]),
            f.params().at("blocks.0.attn.q.w").data()[3]);
}
