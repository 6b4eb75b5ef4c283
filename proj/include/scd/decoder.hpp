#pragma once

// UNETR-style dense decoder whose every tap is a projection of the completed
// token sequence, plus a raw-voxel convolution skip at full resolution.
//
//   x_0 = gelu(tap_0)                                     grid resolution
//   x_s = gelu(conv3(up2(x_{s-1})) + b_s + up(tap_s))     s = 1 .. log2(P)
//   (the last stage also adds conv3(raw volume))
//   logits = conv1(x_S) + b_head

#include <cstdint>
#include <string>
#include <vector>

#include "scd/config.hpp"
#include "scd/encoder.hpp"

namespace scd {

template <typename T>
struct DecoderParams {
  std::vector<Tensor<T>> tap_w, tap_b;  // [C, ch_s], [ch_s]
  std::vector<Tensor<T>> up_w, up_b;    // stage s >= 1: [27, ch_{s-1}, ch_s], [ch_s]
  Tensor<T> skip_w;                     // [27, C_in, ch_S]
  Tensor<T> head_w, head_b;             // [1, ch_S, classes], [classes]

  static DecoderParams create(ParamStore<T>& store, const ModelConfig& cfg) {
    const auto& ch = cfg.decoder.channels;
    const std::size_t dim = cfg.encoder.dim;
    const std::size_t stages = cfg.decoder_stages();
    if (ch.size() != stages + 1) throw ConfigError("decoder.channels must have log2(patch) + 1 entries");
    DecoderParams p;
    for (std::size_t s = 0; s <= stages; ++s) {
      const std::string tag = std::to_string(s);
      p.tap_w.push_back(store.add("decoder.tap." + tag + ".w", {dim, ch[s]}, {Init::Kaiming, 0, dim}));
      p.tap_b.push_back(store.add("decoder.tap." + tag + ".b", {ch[s]}, {Init::Zeros}));
      if (s > 0) {
        p.up_w.push_back(store.add("decoder.up." + tag + ".w", {27, ch[s - 1], ch[s]},
                                   {Init::Kaiming, 0, 27 * ch[s - 1]}));
        p.up_b.push_back(store.add("decoder.up." + tag + ".b", {ch[s]}, {Init::Zeros}));
      }
    }
    const std::size_t last = ch.back();
    const std::size_t in = cfg.encoder.in_channels;
    p.skip_w = store.add("decoder.skip.w", {27, in, last}, {Init::Kaiming, 0, 27 * in});
    p.head_w = store.add("decoder.head.w", {1, last, cfg.decoder.num_classes}, {Init::Kaiming, 0, last});
    p.head_b = store.add("decoder.head.b", {cfg.decoder.num_classes}, {Init::Zeros});
    return p;
  }
};

/// Pure reshape of a grid-ordered [N, C] sequence to [g0, g1, g2, C].
template <typename T>
Tensor<T> tokens_to_volume(const Tensor<T>& tokens, const Extents& grid) {
  const std::size_t n = grid[0] * grid[1] * grid[2];
  if (tokens.rank() != 2 || tokens.dim(0) != n)
    throw DimensionError("tokens_to_volume: " + to_string(tokens.shape()) + " does not fill grid " +
                         std::to_string(grid[0]) + "x" + std::to_string(grid[1]) + "x" + std::to_string(grid[2]));
  return reshape(tokens, {grid[0], grid[1], grid[2], tokens.dim(1)});
}

template <typename T>
Tensor<T> volume_tensor(const VolumeSample& v) {
  std::vector<T> data(v.intensities.begin(), v.intensities.end());
  return Tensor<T>({v.extents[0], v.extents[1], v.extents[2], v.channels}, std::move(data));
}

/// Logits [H, W, D, classes].
template <typename T>
Tensor<T> decode(const TokenSequence<T>& z_compl, const DecoderParams<T>& p, const Tensor<T>& raw,
                 const Extents& grid) {
  const std::size_t stages = p.up_w.size();
  const Tensor<T> grid_tokens = tokens_to_volume(z_compl.tokens, grid);
  auto tap = [&](std::size_t s) {
    const Tensor<T> t = linear(grid_tokens, p.tap_w[s], p.tap_b[s]);
    return s == 0 ? t : upsample_nearest(t, std::size_t{1} << s);
  };
  Tensor<T> x = gelu(tap(0));
  for (std::size_t s = 1; s <= stages; ++s) {
    Tensor<T> y = add(add(conv3d(upsample_nearest(x, 2), p.up_w[s - 1]), p.up_b[s - 1]), tap(s));
    if (s == stages) y = add(y, conv3d(raw, p.skip_w));
    x = gelu(y);
  }
  const Tensor<T> logits = add(conv3d(x, p.head_w), p.head_b);
  if (logits.dim(0) != raw.dim(0) || logits.dim(1) != raw.dim(1) || logits.dim(2) != raw.dim(2))
    throw DimensionError("decode: output " + to_string(logits.shape()) + " does not match input " +
                         to_string(raw.shape()));
  return logits;
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kProbClamp = 1e-7;

namespace detail {
template <typename T>
Tensor<T> one_hot(const std::vector<std::int32_t>& labels, std::size_t classes) {
  std::vector<T> data(labels.size() * classes, T{0});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw DataError("label " + std::to_string(l) + " at voxel " + std::to_string(i) + " outside [0, " +
                      std::to_string(classes) + ")");
    data[i * classes + static_cast<std::size_t>(l)] = T{1};
  }
  return Tensor<T>({labels.size(), classes}, std::move(data));
}

template <typename T>
Tensor<T> flat_probs(const Tensor<T>& logits, std::size_t voxels) {
  const std::size_t classes = logits.dim(-1);
  if (logits.size() != voxels * classes)
    throw DimensionError("loss: logits " + to_string(logits.shape()) + " vs " + std::to_string(voxels) +
                         " labels");
  return softmax(reshape(logits, {voxels, classes}), -1);
}

template <typename T>
Tensor<T> ce_from_probs(const Tensor<T>& probs, const Tensor<T>& onehot) {
  const Tensor<T> logp = log(clamp(probs, T(kProbClamp), T(1 - kProbClamp)));
  return scale(sum_all(mul(onehot, logp)), T(-1) / static_cast<T>(probs.dim(0)));
}

template <typename T>
Tensor<T> dice_from_probs(const Tensor<T>& probs, const Tensor<T>& onehot) {
  const std::size_t classes = probs.dim(-1);
  if (classes < 2) return Tensor<T>::scalar(T{0});
  const T smooth = T(kDiceSmooth);
  const Tensor<T> inter = reshape(sum(mul(probs, onehot), 0), {classes});
  const Tensor<T> denom = reshape(add(sum(probs, 0), sum(onehot, 0)), {classes});
  const Tensor<T> coeff = div(shift(scale(inter, T{2}), smooth), shift(denom, smooth));
  std::vector<std::size_t> fg(classes - 1);
  std::iota(fg.begin(), fg.end(), std::size_t{1});
  return shift(scale(mean_all(gather_rows(coeff, fg)), T{-1}), T{1});
}
}  // namespace detail

/// Mean voxelwise negative log-likelihood with probabilities clamped to [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const std::vector<std::int32_t>& labels) {
  const Tensor<T> onehot = detail::one_hot<T>(labels, logits.dim(-1));
  return detail::ce_from_probs(detail::flat_probs(logits, labels.size()), onehot);
}

/// Soft Dice loss averaged over foreground classes (1 .. classes-1), with
/// smoothing added to numerator and denominator.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const std::vector<std::int32_t>& labels) {
  const Tensor<T> onehot = detail::one_hot<T>(labels, logits.dim(-1));
  return detail::dice_from_probs(detail::flat_probs(logits, labels.size()), onehot);
}

/// 1 * CE + 1 * Dice.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& logits, const std::vector<std::int32_t>& labels) {
  const Tensor<T> onehot = detail::one_hot<T>(labels, logits.dim(-1));
  const Tensor<T> probs = detail::flat_probs(logits, labels.size());
  return add(detail::ce_from_probs(probs, onehot), detail::dice_from_probs(probs, onehot));
}

}  // namespace scd
