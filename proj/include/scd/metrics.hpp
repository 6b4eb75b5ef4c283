#pragma once

// Segmentation metrics: Dice similarity and the 95th-percentile symmetric
// surface distance. Both return std::nullopt when the class is absent from
// prediction and ground truth alike; such classes are excluded from means.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "scd/data.hpp"

namespace scd {

inline std::optional<double> dsc(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt,
                                 std::int32_t cls) {
  if (pred.size() != gt.size()) throw DimensionError("dsc: mask sizes differ");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] == cls, b = gt[i] == cls;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

namespace detail {

/// Coordinates of mask voxels with at least one 6-neighbour outside the mask
/// (the volume border counts as outside).
inline std::vector<std::array<double, 3>> surface_voxels(const std::vector<std::int32_t>& labels,
                                                        const Extents& ext, std::int32_t cls,
                                                        const std::array<double, 3>& spacing) {
  std::vector<std::array<double, 3>> out;
  const auto E0 = static_cast<std::ptrdiff_t>(ext[0]);
  const auto E1 = static_cast<std::ptrdiff_t>(ext[1]);
  const auto E2 = static_cast<std::ptrdiff_t>(ext[2]);
  auto inside = [&](std::ptrdiff_t a, std::ptrdiff_t b, std::ptrdiff_t c) {
    if (a < 0 || b < 0 || c < 0 || a >= E0 || b >= E1 || c >= E2) return false;
    return labels[static_cast<std::size_t>((a * E1 + b) * E2 + c)] == cls;
  };
  for (std::ptrdiff_t a = 0; a < E0; ++a)
    for (std::ptrdiff_t b = 0; b < E1; ++b)
      for (std::ptrdiff_t c = 0; c < E2; ++c) {
        if (!inside(a, b, c)) continue;
        const bool interior = inside(a - 1, b, c) && inside(a + 1, b, c) && inside(a, b - 1, c) &&
                              inside(a, b + 1, c) && inside(a, b, c - 1) && inside(a, b, c + 1);
        if (!interior)
          out.push_back({static_cast<double>(a) * spacing[0], static_cast<double>(b) * spacing[1],
                         static_cast<double>(c) * spacing[2]});
      }
  return out;
}

inline void directed_distances(const std::vector<std::array<double, 3>>& from,
                               const std::vector<std::array<double, 3>>& to, std::vector<double>& out) {
  for (const auto& p : from) {
    double best = INFINITY;
    for (const auto& q : to) {
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
}

}  // namespace detail

/// Linear-interpolated percentile (q in [0, 100]) of a non-empty sample.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// 95th percentile of the pooled surface distances in both directions,
/// brute force over boundary voxels. If exactly one mask is empty the volume
/// diagonal is returned as the worst-case distance.
inline std::optional<double> hd95(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& gt,
                                  std::int32_t cls, const Extents& ext,
                                  const std::array<double, 3>& spacing = {1.0, 1.0, 1.0}) {
  if (pred.size() != gt.size() || pred.size() != ext[0] * ext[1] * ext[2])
    throw DimensionError("hd95: mask sizes do not match extents");
  const auto sp = detail::surface_voxels(pred, ext, cls, spacing);
  const auto sg = detail::surface_voxels(gt, ext, cls, spacing);
  if (sp.empty() && sg.empty()) return std::nullopt;
  if (sp.empty() || sg.empty()) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < 3; ++i) d2 += std::pow(static_cast<double>(ext[i]) * spacing[i], 2);
    return std::sqrt(d2);
  }
  std::vector<double> dist;
  dist.reserve(sp.size() + sg.size());
  detail::directed_distances(sp, sg, dist);
  detail::directed_distances(sg, sp, dist);
  return percentile(std::move(dist), 95.0);
}

struct MetricsReport {
  std::vector<std::optional<double>> dsc;   // per foreground class
  std::vector<std::optional<double>> hd95;  // per foreground class
  std::optional<double> mean_dsc;
  std::optional<double> mean_hd95;
  std::vector<double> loss_curve;
};

inline std::optional<double> defined_mean(const std::vector<std::optional<double>>& v) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      acc += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

/// Per-class DSC / HD95 over foreground classes 1 .. classes-1.
inline MetricsReport evaluate_segmentation(const std::vector<std::int32_t>& pred, const VolumeSample& gt,
                                           std::size_t classes) {
  MetricsReport m;
  for (std::size_t c = 1; c < classes; ++c) {
    const auto cls = static_cast<std::int32_t>(c);
    m.dsc.push_back(dsc(pred, gt.labels, cls));
    m.hd95.push_back(hd95(pred, gt.labels, cls, gt.extents, gt.spacing));
  }
  m.mean_dsc = defined_mean(m.dsc);
  m.mean_hd95 = defined_mean(m.hd95);
  return m;
}

}  // namespace scd
