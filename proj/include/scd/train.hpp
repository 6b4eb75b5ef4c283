#pragma once

// Training loop: forward (training mode, Gumbel noise on) -> CE + Dice ->
// backward -> AdamW step. No auxiliary pruning loss.

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "scd/infer.hpp"
#include "scd/metrics.hpp"
#include "scd/model.hpp"

namespace scd {

/// Decoupled-weight-decay Adam with per-parameter lr scale (layer-wise
/// decay). Weight decay applies to matrices only. `sgd` kind ignores the
/// moment estimates.
template <typename T>
class AdamW {
 public:
  AdamW(ParamStore<T>& store, const TrainConfig& cfg, std::vector<double> lr_scale)
      : store_(store), cfg_(cfg), lr_scale_(std::move(lr_scale)) {
    for (const auto& t : store_.tensors()) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    auto& tensors = store_.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& p = tensors[i];
      if (!p.requires_grad() || !p.has_grad()) continue;
      const double lr = cfg_.lr * lr_scale_[i];
      const bool decay = p.rank() >= 2 && cfg_.weight_decay > 0.0;
      auto data = p.mutable_data();
      const auto grad = p.grad();
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = static_cast<double>(grad[j]);
        double w = static_cast<double>(data[j]);
        if (decay) w -= lr * cfg_.weight_decay * w;
        if (cfg_.optimizer == "sgd") {
          w -= lr * g;
        } else {
          m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g;
          v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g * g;
          w -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + 1e-8);
        }
        data[j] = static_cast<T>(w);
      }
    }
  }

 private:
  ParamStore<T>& store_;
  TrainConfig cfg_;
  std::vector<double> lr_scale_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

template <typename T>
std::vector<double> layer_decay_scales(const ScdModel<T>& model) {
  const auto& cfg = model.config();
  const std::size_t top = cfg.encoder.depth + 1;
  std::vector<double> scales;
  for (const auto& name : model.params().names())
    scales.push_back(std::pow(cfg.train.layer_decay, static_cast<double>(top - model.layer_id(name))));
  return scales;
}

struct Dataset {
  std::vector<VolumeSample> train;
  std::vector<VolumeSample> eval;
};

/// Training and held-out samples derived from the config seed.
inline Dataset make_dataset(const ModelConfig& cfg) {
  Dataset d;
  const auto& e = cfg.encoder;
  for (std::size_t i = 0; i < cfg.train.dataset_size; ++i)
    d.train.push_back(generate_synthetic(derive_seed(cfg.seed, "train." + std::to_string(i)), e.extents,
                                         cfg.decoder.num_classes, e.in_channels));
  for (std::size_t i = 0; i < cfg.train.eval_size; ++i)
    d.eval.push_back(generate_synthetic(derive_seed(cfg.seed, "eval." + std::to_string(i)), e.extents,
                                        cfg.decoder.num_classes, e.in_channels));
  return d;
}

inline std::size_t total_steps(const TrainConfig& t) {
  if (t.epochs > 0) return t.epochs * ((t.dataset_size + t.batch_size - 1) / t.batch_size);
  return t.steps;
}

template <typename T>
struct TrainResult {
  std::vector<double> losses;  // one per step
  MetricsReport report;
};

/// Per-step hook: (step, loss).
using StepSink = std::function<void(std::size_t, double)>;

template <typename T>
std::string score_diagnostics(const std::vector<PruneRecord<T>>& records) {
  std::ostringstream os;
  for (const auto& rec : records) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, mean = 0.0;
    std::size_t nans = 0;
    for (T s : rec.scores) {
      const double v = static_cast<double>(s);
      if (std::isnan(v)) ++nans;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      mean += v;
    }
    if (!rec.scores.empty()) mean /= static_cast<double>(rec.scores.size());
    os << " STP" << rec.stp_index << "{n=" << rec.scores.size() << " min=" << lo << " max=" << hi
       << " mean=" << mean << " nan=" << nans << "}";
  }
  return os.str();
}

/// Mean DSC / HD95 of sliding-window predictions over the held-out samples.
template <typename T>
MetricsReport evaluate(const ScdModel<T>& model, const std::vector<VolumeSample>& samples) {
  const auto& cfg = model.config();
  const std::size_t classes = cfg.decoder.num_classes;
  MetricsReport total;
  std::vector<std::vector<std::optional<double>>> dscs(classes > 0 ? classes - 1 : 0), hds(dscs.size());
  for (const auto& s : samples) {
    const auto pred = sliding_window_infer(model, s, cfg.infer.window, cfg.infer.overlap);
    const auto m = evaluate_segmentation(pred.labels, s, classes);
    for (std::size_t c = 0; c < m.dsc.size(); ++c) {
      dscs[c].push_back(m.dsc[c]);
      hds[c].push_back(m.hd95[c]);
    }
  }
  for (std::size_t c = 0; c < dscs.size(); ++c) {
    total.dsc.push_back(defined_mean(dscs[c]));
    total.hd95.push_back(defined_mean(hds[c]));
  }
  total.mean_dsc = defined_mean(total.dsc);
  total.mean_hd95 = defined_mean(total.hd95);
  return total;
}

/// Undefined metrics (empty prediction and ground truth) become null.
inline nlohmann::json to_json(const MetricsReport& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json dsc = nlohmann::json::array(), hd = nlohmann::json::array();
  for (const auto& v : m.dsc) dsc.push_back(opt(v));
  for (const auto& v : m.hd95) hd.push_back(opt(v));
  return {{"dsc", dsc},
          {"hd95", hd},
          {"mean_dsc", opt(m.mean_dsc)},
          {"mean_hd95", opt(m.mean_hd95)},
          {"loss_curve", m.loss_curve}};
}

/// Runs the configured number of steps; batches cycle through a per-epoch
/// shuffle of the training set. Throws TrainingError on a non-finite loss.
template <typename T>
TrainResult<T> train(ScdModel<T>& model, const Dataset& data, const StepSink& sink = {}) {
  const auto& cfg = model.config();
  const auto& tc = cfg.train;
  if (data.train.empty()) throw DataError("training set is empty");
  auto& store = model.params();
  store.set_requires_grad(!tc.freeze);
  AdamW<T> opt(store, tc, layer_decay_scales(model));
  Rng noise_rng(derive_seed(cfg.seed, "gumbel"));
  Rng order_rng(derive_seed(cfg.seed, "order"));

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  TrainResult<T> result;
  const std::size_t steps = total_steps(tc);
  for (std::size_t step = 0; step < steps; ++step) {
    store.zero_grad();
    ForwardOptions<T> fo;
    fo.training = true;
    fo.rng = &noise_rng;
    if (step < tc.prune_warmup_steps) fo.r = 0.0;
    double step_loss = 0.0;
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const VolumeSample& sample = data.train[order[cursor++]];
      auto fwd = model.forward(sample, fo);
      Tensor<T> loss;
      try {
        loss = scale(total_loss(fwd.logits, sample.labels), T{1} / static_cast<T>(tc.batch_size));
      } catch (const DomainError& e) {
        // NaN logits trip the log guard before the loss exists
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (" + e.what() +
                            "); score statistics:" + score_diagnostics(fwd.records));
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step) +
                            "; score statistics:" + score_diagnostics(fwd.records));
      }
      step_loss += value;
      loss.backward();
    }
    if (!tc.freeze) opt.step();
    result.losses.push_back(step_loss);
    if (sink) sink(step, step_loss);
  }
  store.zero_grad();
  result.report = evaluate(model, data.eval);
  result.report.loss_curve = result.losses;
  return result;
}

}  // namespace scd
