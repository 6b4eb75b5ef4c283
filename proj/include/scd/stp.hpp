#pragma once

// Soft-topK token pruning.
//
// Scores s come from a small local+global MLP. Forward keeps the topK of the
// perturbed log-scores log(s) + g exactly; backward treats the kept tokens as
// multiplied by the tempered softmax of the same perturbed log-scores, so the
// score network receives gradient through every score via the softmax
// coupling.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scd/encoder.hpp"
#include "scd/ops.hpp"
#include "scd/rng.hpp"

namespace scd {

struct StpConfig {
  double r = 0.5;
  double tau = 1.0;
  double eps = 1e-6;
  bool perturb = true;
};

template <typename T>
struct ScoreNetParams {
  Tensor<T> mlp1_w, mlp1_b;    // C -> C
  Tensor<T> mlp2a_w, mlp2a_b;  // 2C -> C/4
  Tensor<T> mlp2b_w, mlp2b_b;  // C/4 -> 1

  static ScoreNetParams create(ParamStore<T>& store, const std::string& prefix, std::size_t dim) {
    const InitSpec w{Init::Normal, 0.02};
    const InitSpec zero{Init::Zeros};
    const std::size_t hidden = std::max<std::size_t>(1, dim / 4);
    return {store.add(prefix + ".mlp1.w", {dim, dim}, w),
            store.add(prefix + ".mlp1.b", {dim}, zero),
            store.add(prefix + ".mlp2a.w", {2 * dim, hidden}, w),
            store.add(prefix + ".mlp2a.b", {hidden}, zero),
            store.add(prefix + ".mlp2b.w", {hidden, 1}, w),
            store.add(prefix + ".mlp2b.b", {1}, zero)};
  }
};

/// Everything MTA and the depth-map exporter need from one pruning step.
/// Indices are local to the non-CLS input rows; positions are original-grid.
template <typename T>
struct PruneRecord {
  std::size_t stp_index = 0;  // 1-based
  std::vector<std::size_t> kept_indices;
  std::vector<std::size_t> pruned_indices;
  std::vector<std::int64_t> kept_positions;
  std::vector<std::int64_t> pruned_positions;
  Tensor<T> pruned_tokens;  // raw values at prune time, [|pruned|, C]
  std::vector<T> scores;
  std::vector<std::uint8_t> hard_mask;
  std::vector<T> soft_mask;
  std::vector<T> gumbel;  // empty when no noise was drawn
};

/// Replay state for gradient checks: fixes the noise, the kept set and the
/// straight-through offsets (M - M~) captured at a base point, so the pruned
/// forward becomes a smooth function whose exact gradient is the
/// straight-through gradient.
template <typename T>
struct StpFreeze {
  std::vector<T> gumbel;
  std::vector<std::size_t> kept_indices;
  std::vector<T> offsets;  // per kept token
};

/// s = Sigmoid(MLP2([z, AvgPool(MLP1(z))])) over rows of z [n, C].
template <typename T>
Tensor<T> estimate_scores(const Tensor<T>& z, const ScoreNetParams<T>& p) {
  if (z.rank() != 2 || z.dim(0) == 0)
    throw DimensionError("estimate_scores needs [n >= 1, C] tokens, got " + to_string(z.shape()));
  const std::size_t n = z.dim(0);
  const Tensor<T> local = gelu(linear(z, p.mlp1_w, p.mlp1_b));
  const Tensor<T> global = expand_rows(mean_pool(local, 0), n);
  const Tensor<T> joined = concat<T>({z, global}, 1);
  const Tensor<T> hidden = gelu(linear(joined, p.mlp2a_w, p.mlp2a_b));
  return reshape(sigmoid(linear(hidden, p.mlp2b_w, p.mlp2b_b)), {n});
}

/// Indices of the K largest values; ties go to the lower index.
template <typename T>
std::vector<std::size_t> topk_indices(std::span<const T> values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

template <typename T>
struct MaskPair {
  std::vector<std::uint8_t> hard;  // M
  Tensor<T> soft;                  // M~, differentiable w.r.t. s
  std::vector<T> perturbed;        // log(s) + g
};

/// M = 1_topK(log s + g); M~ = softmax((log s + g) / tau). `gumbel` empty means g = 0.
template <typename T>
MaskPair<T> soft_topk_mask(const Tensor<T>& s, std::size_t k, T tau, std::span<const T> gumbel) {
  const std::size_t n = s.size();
  if (k < 1 || k > n)
    throw ParameterError("soft_topk_mask: K = " + std::to_string(k) + " outside [1, " +
                         std::to_string(n) + "]");
  if (!gumbel.empty() && gumbel.size() != n)
    throw DimensionError("soft_topk_mask: " + std::to_string(gumbel.size()) + " noise values for " +
                         std::to_string(n) + " scores");
  Tensor<T> logits = log(reshape(s, {n}));
  if (!gumbel.empty()) logits = add(logits, Tensor<T>({n}, std::vector<T>(gumbel.begin(), gumbel.end())));
  MaskPair<T> out;
  out.perturbed.assign(logits.data().begin(), logits.data().end());
  out.soft = softmax(logits, 0, tau);
  out.hard.assign(n, 0);
  for (auto i : topk_indices<T>(out.perturbed, k)) out.hard[i] = 1;
  return out;
}

/// Gathers the kept rows of z and applies the multiplier M~ + stop_grad(M - M~).
/// Without offsets the forward is exactly the gathered rows (multiplier 1);
/// with offsets the multiplier is M~ + offset, evaluated literally.
template <typename T>
Tensor<T> straight_through_keep(const Tensor<T>& z, const Tensor<T>& soft,
                                const std::vector<std::size_t>& kept_indices,
                                const std::vector<T>* offsets = nullptr) {
  const Tensor<T> rows = gather_rows(z, kept_indices);
  const Tensor<T> weights = gather_rows(reshape(soft, {soft.size()}), kept_indices);
  const std::size_t k = kept_indices.size();
  if (offsets) {
    if (offsets->size() != k) throw DimensionError("straight_through_keep: offset count mismatch");
    return row_scale(rows, add(weights, Tensor<T>({k}, *offsets)));
  }
  const std::size_t w = k ? rows.size() / k : 0;
  std::vector<T> out(rows.data().begin(), rows.data().end());
  return detail::make_result<T>(rows.shape(), std::move(out), {rows, weights}, [k, w](Node<T>& o) {
    const T* x = o.inputs[0]->data.data();
    T* gx = detail::input_grad(o, 0);
    T* gs = detail::input_grad(o, 1);
    for (std::size_t r = 0; r < k; ++r) {
      T acc{0};
      for (std::size_t j = 0; j < w; ++j) {
        const T d = o.grad[r * w + j];
        if (gx) gx[r * w + j] += d;
        acc += d * x[r * w + j];
      }
      if (gs) gs[r] += acc;
    }
  });
}

template <typename T>
struct StpResult {
  TokenSequence<T> kept;
  PruneRecord<T> record;
};

/// Scores the non-CLS tokens, samples the kept set, and partitions the input.
/// The [CLS] row (if any) is always kept and never scored. Noise is drawn
/// only when `training` and perturbation are both on.
template <typename T>
StpResult<T> apply_stp(const TokenSequence<T>& z, const StpConfig& cfg, const ScoreNetParams<T>& params,
                       std::size_t stp_index, Rng* rng, bool training,
                       const StpFreeze<T>* replay = nullptr, StpFreeze<T>* capture = nullptr) {
  const std::size_t n = z.body_count();
  const std::size_t k = kept_count(n, cfg.r);
  if (k < 1)
    throw ConfigError("STP " + std::to_string(stp_index) + ": ratio " + std::to_string(cfg.r) +
                      " keeps zero of " + std::to_string(n) + " tokens");
  const std::size_t first = z.has_cls ? 1 : 0;
  std::vector<std::size_t> body_rows(n);
  std::iota(body_rows.begin(), body_rows.end(), first);
  const Tensor<T> body = z.has_cls ? gather_rows(z.tokens, body_rows) : z.tokens;

  StpResult<T> result;
  PruneRecord<T>& rec = result.record;
  rec.stp_index = stp_index;

  std::vector<T> noise;
  if (replay) {
    noise = replay->gumbel;
  } else if (training && cfg.perturb) {
    if (!rng) throw ContractError("apply_stp: training with perturbation needs an rng");
    noise = sample_gumbel<T>(n, *rng);
  }
  rec.gumbel = noise;

  auto score_and_mask = [&] {
    const Tensor<T> s = clamp(estimate_scores(body, params), static_cast<T>(cfg.eps), T{1});
    rec.scores.assign(s.data().begin(), s.data().end());
    return soft_topk_mask<T>(s, k, static_cast<T>(cfg.tau), noise);
  };

  if (k == n) {
    // Keeping everything is a constant selection; the sequence passes through
    // untouched and no gradient reaches the score network.
    NoGradGuard no_grad;
    MaskPair<T> masks = score_and_mask();
    rec.hard_mask = std::move(masks.hard);
    rec.soft_mask.assign(masks.soft.data().begin(), masks.soft.data().end());
    rec.kept_indices.resize(n);
    std::iota(rec.kept_indices.begin(), rec.kept_indices.end(), std::size_t{0});
    for (auto i : rec.kept_indices) rec.kept_positions.push_back(z.positions[first + i]);
    rec.pruned_tokens = Tensor<T>::zeros({0, z.tokens.dim(1)});
    result.kept = z;
    if (capture) *capture = {noise, rec.kept_indices, std::vector<T>(n, T{0})};
    return result;
  }

  MaskPair<T> masks = score_and_mask();
  rec.hard_mask = masks.hard;
  rec.soft_mask.assign(masks.soft.data().begin(), masks.soft.data().end());
  if (replay) {
    rec.kept_indices = replay->kept_indices;
    std::fill(rec.hard_mask.begin(), rec.hard_mask.end(), 0);
    for (auto i : rec.kept_indices) rec.hard_mask[i] = 1;
  } else {
    for (std::size_t i = 0; i < n; ++i)
      if (masks.hard[i]) rec.kept_indices.push_back(i);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!rec.hard_mask[i]) rec.pruned_indices.push_back(i);
  for (auto i : rec.kept_indices) rec.kept_positions.push_back(z.positions[first + i]);
  for (auto i : rec.pruned_indices) rec.pruned_positions.push_back(z.positions[first + i]);

  if (capture) {
    capture->gumbel = noise;
    capture->kept_indices = rec.kept_indices;
    capture->offsets.clear();
    for (auto i : rec.kept_indices) capture->offsets.push_back(T{1} - rec.soft_mask[i]);
  }

  const Tensor<T> kept_rows =
      straight_through_keep(body, masks.soft, rec.kept_indices, replay ? &replay->offsets : nullptr);
  rec.pruned_tokens = gather_rows(body, rec.pruned_indices);

  TokenSequence<T>& out = result.kept;
  out.has_cls = z.has_cls;
  if (z.has_cls) {
    out.tokens = concat<T>({gather_rows(z.tokens, {0}), kept_rows}, 0);
    out.positions.push_back(z.positions[0]);
  } else {
    out.tokens = kept_rows;
  }
  out.positions.insert(out.positions.end(), rec.kept_positions.begin(), rec.kept_positions.end());
  return result;
}

}  // namespace scd
