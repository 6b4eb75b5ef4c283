#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"

using Labels = std::vector<std::int32_t>;

namespace {

constexpr scd::Extents kExt{12, 12, 12};

std::size_t at(std::size_t a, std::size_t b, std::size_t c) { return (a * kExt[1] + b) * kExt[2] + c; }

Labels cube(std::size_t lo, std::size_t hi, std::int32_t cls = 1) {
  Labels m(kExt[0] * kExt[1] * kExt[2], 0);
  for (std::size_t a = lo; a < hi; ++a)
    for (std::size_t b = lo; b < hi; ++b)
      for (std::size_t c = lo; c < hi; ++c) m[at(a, b, c)] = cls;
  return m;
}

Labels dilate6(const Labels& m) {
  Labels out = m;
  const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (std::size_t a = 1; a + 1 < kExt[0]; ++a)
    for (std::size_t b = 1; b + 1 < kExt[1]; ++b)
      for (std::size_t c = 1; c + 1 < kExt[2]; ++c)
        if (m[at(a, b, c)] == 1)
          for (const auto& o : d) out[at(a + o[0], b + o[1], c + o[2])] = 1;
  return out;
}

}  // namespace

TEST(Dsc, CountsOverlap) {
  const Labels pred{1, 1, 0, 0, 2}, gt{1, 0, 1, 0, 2};
  EXPECT_DOUBLE_EQ(*scd::dsc(pred, gt, 1), 0.5);
  EXPECT_DOUBLE_EQ(*scd::dsc(pred, gt, 2), 1.0);
  EXPECT_FALSE(scd::dsc(pred, gt, 3).has_value());
  EXPECT_DOUBLE_EQ(*scd::dsc(Labels{1, 0}, Labels{0, 1}, 1), 0.0);
  EXPECT_THROW(scd::dsc(Labels{1}, Labels{1, 0}, 1), scd::DimensionError);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(scd::percentile({4, 1, 3, 2}, 50), 2.5);
  EXPECT_NEAR(scd::percentile({1, 2, 3, 4}, 95), 3.85, 1e-12);
  EXPECT_DOUBLE_EQ(scd::percentile({7}, 95), 7.0);
  EXPECT_THROW(scd::percentile({}, 95), scd::DataError);
}

TEST(Hd95, IdenticalMasksAreZero) {
  const auto m = cube(3, 8);
  EXPECT_DOUBLE_EQ(*scd::hd95(m, m, 1, kExt), 0.0);
}

TEST(Hd95, OneVoxelDilationIsOne) {
  const auto gt = cube(3, 8);
  EXPECT_DOUBLE_EQ(*scd::hd95(dilate6(gt), gt, 1, kExt), 1.0);
}

TEST(Hd95, SingleVoxelsRespectSpacing) {
  Labels pred(kExt[0] * kExt[1] * kExt[2], 0), gt = pred;
  pred[at(2, 2, 2)] = 1;
  gt[at(2, 2, 5)] = 1;
  EXPECT_DOUBLE_EQ(*scd::hd95(pred, gt, 1, kExt), 3.0);
  EXPECT_DOUBLE_EQ(*scd::hd95(pred, gt, 1, kExt, {1.0, 1.0, 2.0}), 6.0);
}

TEST(Hd95, EmptyCases) {
  const Labels empty(kExt[0] * kExt[1] * kExt[2], 0);
  EXPECT_FALSE(scd::hd95(empty, empty, 1, kExt).has_value());
  EXPECT_NEAR(*scd::hd95(cube(3, 5), empty, 1, kExt), std::sqrt(3.0) * 12, 1e-12);
}

TEST(Hd95, BorderCountsAsOutside) {
  // A full volume has every border voxel on its surface.
  const Labels full(kExt[0] * kExt[1] * kExt[2], 1);
  EXPECT_DOUBLE_EQ(*scd::hd95(full, full, 1, kExt), 0.0);
  const auto s = scd::detail::surface_voxels(full, kExt, 1, {1, 1, 1});
  EXPECT_EQ(s.size(), 12u * 12 * 12 - 10u * 10 * 10);
}

TEST(Evaluate, PerClassAndMeans) {
  scd::VolumeSample gt;
  gt.extents = kExt;
  gt.labels = cube(2, 6, 1);
  const auto second = cube(7, 10, 2);
  for (std::size_t i = 0; i < second.size(); ++i)
    if (second[i]) gt.labels[i] = 2;
  const auto m = scd::evaluate_segmentation(gt.labels, gt, 4);
  ASSERT_EQ(m.dsc.size(), 3u);
  EXPECT_DOUBLE_EQ(*m.dsc[0], 1.0);
  EXPECT_DOUBLE_EQ(*m.dsc[1], 1.0);
  EXPECT_FALSE(m.dsc[2].has_value());
  EXPECT_DOUBLE_EQ(*m.mean_dsc, 1.0);
  EXPECT_DOUBLE_EQ(*m.mean_hd95, 0.0);
}
