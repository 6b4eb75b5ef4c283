#pragma once

// Sliding-window inference with uniform averaging of softmax probabilities
// over overlapping tiles. Always runs in inference mode (no Gumbel noise).

#include <cmath>
#include <cstdint>
#include <vector>

#include "scd/model.hpp"

namespace scd {

/// Tile origins along one axis: stride = round(window * (1 - overlap)); a
/// final tile is aligned to the end when the stride does not land there.
inline std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t window, double overlap) {
  if (window == 0 || extent < window)
    throw ConfigError("sliding window: volume extent " + std::to_string(extent) + " smaller than window " +
                      std::to_string(window));
  const auto stride = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(window) * (1.0 - overlap))));
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= extent; s += stride) starts.push_back(s);
  if (starts.back() + window < extent) starts.push_back(extent - window);
  return starts;
}

struct SlidingWindowResult {
  std::vector<std::int32_t> labels;
  std::vector<float> probabilities;  // [voxels, classes]
  std::size_t tiles = 0;
};

template <typename T>
SlidingWindowResult sliding_window_infer(const ScdModel<T>& model, const VolumeSample& volume,
                                         const Extents& window, double overlap = 0.5) {
  const auto& cfg = model.config();
  if (window != cfg.encoder.extents)
    throw ConfigError("sliding window extents must equal the model's input extents");
  for (std::size_t i = 0; i < 3; ++i)
    if (window[i] % cfg.encoder.patch != 0) throw ConfigError("window extents must be divisible by the patch size");
  const auto s0 = tile_starts(volume.extents[0], window[0], overlap);
  const auto s1 = tile_starts(volume.extents[1], window[1], overlap);
  const auto s2 = tile_starts(volume.extents[2], window[2], overlap);
  const std::size_t classes = cfg.decoder.num_classes;
  const std::size_t nvox = volume.voxels();
  std::vector<double> acc(nvox * classes, 0.0);
  std::vector<std::uint32_t> hits(nvox, 0);

  NoGradGuard no_grad;
  SlidingWindowResult out;
  for (auto a : s0)
    for (auto b : s1)
      for (auto c : s2) {
        const VolumeSample tile = crop(volume, {a, b, c}, window);
        const auto logits = model.forward(tile).logits;
        const auto probs = softmax(reshape(logits, {tile.voxels(), classes}), -1);
        const T* p = probs.data().data();
        for (std::size_t x = 0; x < window[0]; ++x)
          for (std::size_t y = 0; y < window[1]; ++y)
            for (std::size_t z = 0; z < window[2]; ++z) {
              const std::size_t local = (x * window[1] + y) * window[2] + z;
              const std::size_t global = ((a + x) * volume.extents[1] + b + y) * volume.extents[2] + c + z;
              for (std::size_t k = 0; k < classes; ++k)
                acc[global * classes + k] += static_cast<double>(p[local * classes + k]);
              ++hits[global];
            }
        ++out.tiles;
      }

  out.labels.resize(nvox);
  out.probabilities.resize(nvox * classes);
  for (std::size_t v = 0; v < nvox; ++v) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double pr = acc[v * classes + k] / hits[v];
      out.probabilities[v * classes + k] = static_cast<float>(pr);
      if (pr > acc[v * classes + best] / hits[v]) best = k;
    }
    out.labels[v] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace scd
