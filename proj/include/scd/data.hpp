#pragma once

// Synthetic volumetric segmentation data: sparse ellipsoidal blobs over a
// noisy background, intensities normalized to [-1, 1].

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "scd/config.hpp"
#include "scd/rng.hpp"

namespace scd {

struct VolumeSample {
  Extents extents{0, 0, 0};
  std::size_t channels = 1;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> intensities;  // [d0, d1, d2, channels] row-major
  std::vector<std::int32_t> labels;  // [d0, d1, d2]
  std::uint64_t seed = 0;

  std::size_t voxels() const { return extents[0] * extents[1] * extents[2]; }
};

/// Copies the sub-volume starting at `origin` with extents `size`.
inline VolumeSample crop(const VolumeSample& v, const Extents& origin, const Extents& size) {
  for (std::size_t i = 0; i < 3; ++i)
    if (origin[i] + size[i] > v.extents[i]) throw DimensionError("crop window exceeds volume");
  VolumeSample out;
  out.extents = size;
  out.channels = v.channels;
  out.spacing = v.spacing;
  out.seed = v.seed;
  out.intensities.resize(out.voxels() * v.channels);
  out.labels.resize(v.labels.empty() ? 0 : out.voxels());
  for (std::size_t a = 0; a < size[0]; ++a)
    for (std::size_t b = 0; b < size[1]; ++b)
      for (std::size_t c = 0; c < size[2]; ++c) {
        const std::size_t src = ((origin[0] + a) * v.extents[1] + origin[1] + b) * v.extents[2] + origin[2] + c;
        const std::size_t dst = (a * size[1] + b) * size[2] + c;
        std::copy_n(v.intensities.begin() + static_cast<std::ptrdiff_t>(src * v.channels), v.channels,
                    out.intensities.begin() + static_cast<std::ptrdiff_t>(dst * v.channels));
        if (!out.labels.empty()) out.labels[dst] = v.labels[src];
      }
  return out;
}

inline double foreground_fraction(const VolumeSample& v) {
  const auto fg = std::count_if(v.labels.begin(), v.labels.end(), [](std::int32_t l) { return l != 0; });
  return static_cast<double>(fg) / static_cast<double>(v.labels.size());
}

namespace detail {

struct Blob {
  std::array<double, 3> center;
  std::array<double, 3> radii;
  std::int32_t label;
};

inline void paint(std::vector<std::int32_t>& labels, const Extents& ext, const Blob& blob) {
  for (std::size_t a = 0; a < ext[0]; ++a)
    for (std::size_t b = 0; b < ext[1]; ++b)
      for (std::size_t c = 0; c < ext[2]; ++c) {
        const double u = (static_cast<double>(a) - blob.center[0]) / blob.radii[0];
        const double v = (static_cast<double>(b) - blob.center[1]) / blob.radii[1];
        const double w = (static_cast<double>(c) - blob.center[2]) / blob.radii[2];
        if (u * u + v * v + w * w <= 1.0) labels[(a * ext[1] + b) * ext[2] + c] = blob.label;
      }
}

}  // namespace detail

/// Mean intensity of a class before smoothing: 0 for background, then
/// +1, -1, +1/2, -1/2, ... so that blurred edges of one class never pass
/// through the level of another.
inline double class_level(std::int32_t label) {
  if (label <= 0) return 0.0;
  const double magnitude = 1.0 / static_cast<double>((label + 1) / 2);
  return label % 2 ? magnitude : -magnitude;
}

/// Deterministic per seed. Each foreground class gets 1-3 ellipsoids; the
/// total foreground fraction is kept within [0.01, 0.10]. Intensities are a
/// box-smoothed class signal plus Gaussian noise, min-max scaled to [-1, 1].
inline VolumeSample generate_synthetic(std::uint64_t seed, const Extents& extents,
                                       std::size_t num_classes, std::size_t channels = 1) {
  if (num_classes == 0) throw DataError("num_classes must be >= 1");
  VolumeSample s;
  s.extents = extents;
  s.channels = channels;
  s.seed = seed;
  const std::size_t nvox = s.voxels();
  s.labels.assign(nvox, 0);
  Rng rng(derive_seed(seed, "synthetic"));

  const std::size_t fg_classes = num_classes - 1;
  if (fg_classes > 0) {
    const double total = static_cast<double>(nvox);
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::fill(s.labels.begin(), s.labels.end(), 0);
      const double target = rng.uniform(0.02, 0.08);
      for (std::size_t cls = 1; cls <= fg_classes; ++cls) {
        const std::size_t blobs = 1 + rng.below(3);
        const double blob_volume = target * total / static_cast<double>(fg_classes * blobs);
        for (std::size_t b = 0; b < blobs; ++b) {
          detail::Blob blob;
          blob.label = static_cast<std::int32_t>(cls);
          std::array<double, 3> aspect{rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3)};
          const double base = std::cbrt(blob_volume * 3.0 / (4.0 * 3.14159265358979323846) /
                                        (aspect[0] * aspect[1] * aspect[2]));
          for (std::size_t i = 0; i < 3; ++i) {
            blob.radii[i] = std::max(1.0, base * aspect[i]);
            const double margin = std::min(blob.radii[i], static_cast<double>(extents[i]) / 2.0 - 0.5);
            blob.center[i] = rng.uniform(margin, static_cast<double>(extents[i]) - 1.0 - margin);
          }
          detail::paint(s.labels, extents, blob);
        }
      }
      const double frac = foreground_fraction(s);
      bool every_class = true;
      for (std::size_t cls = 1; cls <= fg_classes; ++cls)
        every_class &= std::find(s.labels.begin(), s.labels.end(), static_cast<std::int32_t>(cls)) != s.labels.end();
      if (frac >= 0.01 && frac <= 0.10 && every_class) break;
    }
  }

  // Class signal, box-smoothed once over the 3x3x3 neighbourhood.
  std::vector<double> signal(nvox);
  for (std::size_t i = 0; i < nvox; ++i) signal[i] = class_level(s.labels[i]);
  std::vector<double> smooth(nvox, 0.0);
  const auto E0 = static_cast<std::ptrdiff_t>(extents[0]);
  const auto E1 = static_cast<std::ptrdiff_t>(extents[1]);
  const auto E2 = static_cast<std::ptrdiff_t>(extents[2]);
  for (std::ptrdiff_t a = 0; a < E0; ++a)
    for (std::ptrdiff_t b = 0; b < E1; ++b)
      for (std::ptrdiff_t c = 0; c < E2; ++c) {
        double acc = 0.0;
        int n = 0;
        for (std::ptrdiff_t p = -1; p <= 1; ++p)
          for (std::ptrdiff_t q = -1; q <= 1; ++q)
            for (std::ptrdiff_t r = -1; r <= 1; ++r) {
              const auto x = a + p, y = b + q, z = c + r;
              if (x < 0 || y < 0 || z < 0 || x >= E0 || y >= E1 || z >= E2) continue;
              acc += signal[static_cast<std::size_t>((x * E1 + y) * E2 + z)];
              ++n;
            }
        smooth[static_cast<std::size_t>((a * E1 + b) * E2 + c)] = acc / n;
      }

  s.intensities.resize(nvox * channels);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    std::vector<double> raw(nvox);
    for (std::size_t i = 0; i < nvox; ++i) raw[i] = smooth[i] + 0.1 * rng.normal();
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    const double range = std::max(*hi - *lo, 1e-12);
    for (std::size_t i = 0; i < nvox; ++i)
      s.intensities[i * channels + ch] = static_cast<float>(2.0 * (raw[i] - *lo) / range - 1.0);
  }
  return s;
}

}  // namespace scd
