#pragma once

// End-to-end sparse encoding -> token completion -> dense decoding model.

#include <optional>
#include <string>
#include <vector>

#include "scd/config.hpp"
#include "scd/decoder.hpp"
#include "scd/encoder.hpp"
#include "scd/mta.hpp"
#include "scd/stp.hpp"

namespace scd {

template <typename T>
struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
  std::optional<double> r;  // overrides cfg.encoder.r (pruning warmup)
  const std::vector<StpFreeze<T>>* replay = nullptr;
  std::vector<StpFreeze<T>>* capture = nullptr;
};

template <typename T>
struct EncodeResult {
  TokenSequence<T> z_last;  // still carries [CLS]
  std::vector<PruneRecord<T>> records;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  std::vector<PruneRecord<T>> records;
  TokenSequence<T> completed;
};

template <typename T>
class ScdModel {
 public:
  explicit ScdModel(ModelConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.seed) {
    validate(cfg_);
    const auto& e = cfg_.encoder;
    embed_cfg_ = PatchEmbedConfig::from(e);
    embed_ = PatchEmbedParams<T>::create(store_, embed_cfg_);
    for (std::size_t i = 0; i < e.depth; ++i)
      blocks_.push_back(BlockParams<T>::create(store_, "blocks." + std::to_string(i), e.dim, e.heads));
    for (std::size_t k = 0; k < e.stp_after.size(); ++k)
      score_nets_.push_back(ScoreNetParams<T>::create(store_, "stp." + std::to_string(k + 1), e.dim));
    mta_ = MtaParams<T>::create(store_, e.stp_after.size(), cfg_.mta.depth, e.num_tokens(), e.dim, e.heads);
    decoder_ = DecoderParams<T>::create(store_, cfg_);
  }

  ScdModel(const ScdModel&) = delete;
  ScdModel& operator=(const ScdModel&) = delete;
  ScdModel(ScdModel&&) noexcept = default;
  ScdModel& operator=(ScdModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const MtaParams<T>& mta_params() const { return mta_; }
  const DecoderParams<T>& decoder_params() const { return decoder_; }

  StpConfig stp_config(std::optional<double> r = std::nullopt) const {
    const auto& e = cfg_.encoder;
    return {r.value_or(e.r), e.tau, e.eps, e.perturb};
  }

  /// Runs the L blocks, applying STP k after block stp_after[k].
  EncodeResult<T> encode(const VolumeSample& volume, const ForwardOptions<T>& opt = {}) const {
    const auto& e = cfg_.encoder;
    const StpConfig stp = stp_config(opt.r);
    if (opt.replay && opt.replay->size() != e.stp_after.size())
      throw ContractError("encode: replay state for " + std::to_string(opt.replay->size()) + " STPs, model has " +
                          std::to_string(e.stp_after.size()));
    if (opt.capture) opt.capture->assign(e.stp_after.size(), {});
    EncodeResult<T> out;
    out.z_last = patch_embed(volume, embed_cfg_, embed_);
    std::size_t next = 0;
    const T ln_eps = static_cast<T>(e.ln_eps);
    for (std::size_t i = 0; i < e.depth; ++i) {
      out.z_last = transformer_block(out.z_last, blocks_[i], ln_eps);
      if (next < e.stp_after.size() && e.stp_after[next] == i + 1) {
        auto res = apply_stp(out.z_last, stp, score_nets_[next], next + 1, opt.rng, opt.training,
                             opt.replay ? &(*opt.replay)[next] : nullptr,
                             opt.capture ? &(*opt.capture)[next] : nullptr);
        out.z_last = std::move(res.kept);
        out.records.push_back(std::move(res.record));
        ++next;
      }
    }
    return out;
  }

  ForwardResult<T> forward(const VolumeSample& volume, const ForwardOptions<T>& opt = {}) const {
    EncodeResult<T> enc = encode(volume, opt);
    const TokenSequence<T> body = drop_cls(enc.z_last);
    const TokenSequence<T> assembled = assemble(enc.records, body, cfg_.encoder.num_tokens(), mta_.block_tokens);
    ForwardResult<T> out;
    out.completed = complete(assembled, mta_, static_cast<T>(cfg_.encoder.ln_eps));
    out.logits = decode(out.completed, decoder_, volume_tensor<T>(volume), cfg_.encoder.grid());
    out.records = std::move(enc.records);
    return out;
  }

  /// Layer id for layer-wise lr decay: 0 = embedding, i+1 = encoder block i,
  /// depth+1 = everything after the encoder blocks (STP, MTA, decoder).
  std::size_t layer_id(const std::string& name) const {
    if (name.rfind("embed.", 0) == 0) return 0;
    if (name.rfind("blocks.", 0) == 0) return 1 + std::stoul(name.substr(7, name.find('.', 7) - 7));
    return cfg_.encoder.depth + 1;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  PatchEmbedConfig embed_cfg_;
  PatchEmbedParams<T> embed_;
  std::vector<BlockParams<T>> blocks_;
  std::vector<ScoreNetParams<T>> score_nets_;
  MtaParams<T> mta_;
  DecoderParams<T> decoder_;
};

}  // namespace scd
