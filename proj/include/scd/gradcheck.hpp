#pragma once

// Central-difference gradient checking and Monte-Carlo sampler checks, used
// by the command-line `gradcheck` and `sample-check` workflows.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scd/model.hpp"

namespace scd {

struct GradcheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() of `loss` with fourth-order central differences on up to
/// `per_tensor` coordinates of each tensor (all coordinates when 0).
inline GradcheckResult gradcheck(const std::string& name, const std::function<Tensor<double>()>& loss,
                                 std::vector<std::pair<std::string, Tensor<double>>> inputs,
                                 std::size_t per_tensor = 0, double h = 1e-5, std::uint64_t seed = 7) {
  for (auto& [_, t] : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& [_, t] : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradcheckResult res;
  res.name = name;
  Rng rng(seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k].second;
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (per_tensor > 0 && coords.size() > per_tensor) {
      rng.shuffle(coords);
      coords.resize(per_tensor);
    }
    auto data = t.mutable_data();
    for (auto i : coords) {
      const double orig = data[i];
      auto at = [&](double offset) {
        data[i] = orig + offset;
        return loss().item();
      };
      const double numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
      data[i] = orig;
      const double err = relative_error(analytic[k][i], numeric);
      ++res.checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = inputs[k].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

/// Gradient check of the whole pipeline with frozen noise and selection:
/// analytic (straight-through) gradients of total_loss against central
/// differences of the frozen surrogate.
inline GradcheckResult pipeline_gradcheck(const ModelConfig& cfg, std::size_t per_tensor, double h = 1e-3) {
  ScdModel<double> model(cfg);
  const VolumeSample sample =
      generate_synthetic(derive_seed(cfg.seed, "gradcheck"), cfg.encoder.extents, cfg.decoder.num_classes,
                         cfg.encoder.in_channels);
  Rng rng(derive_seed(cfg.seed, "gradcheck.noise"));
  std::vector<StpFreeze<double>> frozen;
  {
    NoGradGuard no_grad;
    ForwardOptions<double> fo;
    fo.training = true;
    fo.rng = &rng;
    fo.capture = &frozen;
    (void)model.forward(sample, fo);
  }
  ForwardOptions<double> replay;
  replay.training = true;
  replay.replay = &frozen;
  auto loss = [&] { return total_loss(model.forward(sample, replay).logits, sample.labels); };
  std::vector<std::pair<std::string, Tensor<double>>> inputs;
  for (std::size_t i = 0; i < model.params().names().size(); ++i)
    inputs.emplace_back(model.params().names()[i], model.params().tensors()[i]);
  return gradcheck("pipeline", loss, std::move(inputs), per_tensor, h);
}

/// Empirical P(M_i = 1) under training-mode sampling (Gumbel-perturbed topK).
inline std::vector<double> inclusion_frequencies(const std::vector<double>& scores, std::size_t k,
                                                 std::size_t trials, Rng& rng) {
  const std::size_t n = scores.size();
  if (k < 1 || k > n) throw ParameterError("inclusion_frequencies: K outside [1, n]");
  std::vector<double> log_s(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(scores[i] > 0.0)) throw DomainError("inclusion_frequencies: scores must be positive");
    log_s[i] = std::log(scores[i]);
  }
  std::vector<std::size_t> counts(n, 0);
  std::vector<double> perturbed(n);
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < n; ++i) perturbed[i] = log_s[i] + rng.gumbel();
    for (auto i : topk_indices<double>(perturbed, k)) ++counts[i];
  }
  std::vector<double> freq(n);
  for (std::size_t i = 0; i < n; ++i) freq[i] = static_cast<double>(counts[i]) / static_cast<double>(trials);
  return freq;
}

}  // namespace scd
