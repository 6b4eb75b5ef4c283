#pragma once

// 3D patch tokenization and pre-norm ViT blocks.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scd/config.hpp"
#include "scd/data.hpp"
#include "scd/ops.hpp"
#include "scd/params.hpp"

namespace scd {

inline constexpr std::int64_t kClsPosition = -1;

/// Tokens plus their original-grid linear positions. When has_cls is set,
/// row 0 is the [CLS] token with position kClsPosition.
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;  // [count, C]
  std::vector<std::int64_t> positions;
  bool has_cls = false;

  std::size_t count() const { return positions.size(); }
  std::size_t body_count() const { return count() - (has_cls ? 1 : 0); }
};

struct PatchEmbedConfig {
  Extents extents{32, 32, 32};
  std::size_t patch = 8;
  std::size_t in_channels = 1;
  std::size_t dim = 64;

  Extents grid() const { return {extents[0] / patch, extents[1] / patch, extents[2] / patch}; }
  std::size_t num_tokens() const {
    const auto g = grid();
    return g[0] * g[1] * g[2];
  }

  void validate() const {
    for (auto e : extents)
      if (patch == 0 || e == 0 || e % patch != 0)
        throw ConfigError("patch embedding: extents [" + std::to_string(extents[0]) + ", " +
                          std::to_string(extents[1]) + ", " + std::to_string(extents[2]) +
                          "] not divisible by patch size " + std::to_string(patch));
  }

  static PatchEmbedConfig from(const EncoderConfig& e) {
    return {e.extents, e.patch, e.in_channels, e.dim};
  }
};

template <typename T>
struct PatchEmbedParams {
  Tensor<T> proj_w, proj_b, pos, cls;

  static PatchEmbedParams create(ParamStore<T>& store, const PatchEmbedConfig& cfg) {
    const std::size_t in = cfg.patch * cfg.patch * cfg.patch * cfg.in_channels;
    return {store.add("embed.proj.w", {in, cfg.dim}, {Init::Normal, 0.02}),
            store.add("embed.proj.b", {cfg.dim}, {Init::Zeros}),
            store.add("embed.pos", {cfg.num_tokens(), cfg.dim}, {Init::Normal, 0.02}),
            store.add("embed.cls", {1, cfg.dim}, {Init::Normal, 0.02})};
  }
};

/// Flattens the volume into [N, P^3 * C_in] patch rows. Patches follow
/// row-major grid order; within a patch the order is (d0, d1, d2, channel).
template <typename T>
Tensor<T> patchify(const VolumeSample& volume, const PatchEmbedConfig& cfg) {
  cfg.validate();
  if (volume.extents != cfg.extents || volume.channels != cfg.in_channels)
    throw DimensionError("patchify: volume does not match patch-embedding config");
  const std::size_t p = cfg.patch, ch = cfg.in_channels;
  const auto g = cfg.grid();
  const auto& ext = cfg.extents;
  const std::size_t width = p * p * p * ch;
  std::vector<T> rows(cfg.num_tokens() * width);
  std::size_t token = 0;
  for (std::size_t i = 0; i < g[0]; ++i)
    for (std::size_t j = 0; j < g[1]; ++j)
      for (std::size_t k = 0; k < g[2]; ++k, ++token) {
        T* dst = rows.data() + token * width;
        for (std::size_t a = 0; a < p; ++a)
          for (std::size_t b = 0; b < p; ++b)
            for (std::size_t c = 0; c < p; ++c) {
              const std::size_t vox = ((i * p + a) * ext[1] + j * p + b) * ext[2] + k * p + c;
              for (std::size_t q = 0; q < ch; ++q)
                *dst++ = static_cast<T>(volume.intensities[vox * ch + q]);
            }
      }
  return Tensor<T>({cfg.num_tokens(), width}, std::move(rows));
}

/// Linear patch projection plus learnable position embedding, with [CLS] prepended.
template <typename T>
TokenSequence<T> patch_embed(const VolumeSample& volume, const PatchEmbedConfig& cfg,
                             const PatchEmbedParams<T>& params) {
  const Tensor<T> rows = patchify<T>(volume, cfg);
  const Tensor<T> tokens = add(linear(rows, params.proj_w, params.proj_b), params.pos);
  TokenSequence<T> z;
  z.tokens = concat<T>({params.cls, tokens}, 0);
  z.has_cls = true;
  z.positions.push_back(kClsPosition);
  for (std::size_t p = 0; p < cfg.num_tokens(); ++p) z.positions.push_back(static_cast<std::int64_t>(p));
  return z;
}

template <typename T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Tensor<T> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  std::size_t heads = 1;

  static BlockParams create(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                            std::size_t heads) {
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("block '" + prefix + "': dim " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
    const InitSpec w{Init::Normal, 0.02};
    const InitSpec zero{Init::Zeros};
    BlockParams b;
    b.heads = heads;
    b.ln1_g = store.add(prefix + ".ln1.g", {dim}, {Init::Ones});
    b.ln1_b = store.add(prefix + ".ln1.b", {dim}, zero);
    b.q_w = store.add(prefix + ".attn.q.w", {dim, dim}, w);
    b.q_b = store.add(prefix + ".attn.q.b", {dim}, zero);
    b.k_w = store.add(prefix + ".attn.k.w", {dim, dim}, w);
    b.k_b = store.add(prefix + ".attn.k.b", {dim}, zero);
    b.v_w = store.add(prefix + ".attn.v.w", {dim, dim}, w);
    b.v_b = store.add(prefix + ".attn.v.b", {dim}, zero);
    b.o_w = store.add(prefix + ".attn.o.w", {dim, dim}, w);
    b.o_b = store.add(prefix + ".attn.o.b", {dim}, zero);
    b.ln2_g = store.add(prefix + ".ln2.g", {dim}, {Init::Ones});
    b.ln2_b = store.add(prefix + ".ln2.b", {dim}, zero);
    b.fc1_w = store.add(prefix + ".mlp.fc1.w", {dim, 4 * dim}, w);
    b.fc1_b = store.add(prefix + ".mlp.fc1.b", {4 * dim}, zero);
    b.fc2_w = store.add(prefix + ".mlp.fc2.w", {4 * dim, dim}, w);
    b.fc2_b = store.add(prefix + ".mlp.fc2.b", {dim}, zero);
    return b;
  }
};

/// Multi-head self-attention over rows of x [n, C].
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const BlockParams<T>& p) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = p.heads, d = c / h;
  auto heads_first = [&](const Tensor<T>& t) { return permute(reshape(t, {n, h, d}), {1, 0, 2}); };
  const Tensor<T> q = heads_first(linear(x, p.q_w, p.q_b));
  const Tensor<T> k = heads_first(linear(x, p.k_w, p.k_b));
  const Tensor<T> v = heads_first(linear(x, p.v_w, p.v_b));
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(d));
  const Tensor<T> att = softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), -1);
  const Tensor<T> out = reshape(permute(matmul(att, v), {1, 0, 2}), {n, c});
  return linear(out, p.o_w, p.o_b);
}

/// Pre-norm block: z + MSA(LN(z)), then + MLP(LN(.)).
template <typename T>
TokenSequence<T> transformer_block(const TokenSequence<T>& z, const BlockParams<T>& p, T ln_eps) {
  const std::size_t c = p.ln1_g.size();
  if (z.tokens.rank() != 2 || z.tokens.dim(1) != c)
    throw DimensionError("transformer_block: tokens " + to_string(z.tokens.shape()) +
                         " do not have width " + std::to_string(c));
  const Tensor<T> x1 = add(z.tokens, self_attention(layernorm(z.tokens, p.ln1_g, p.ln1_b, ln_eps), p));
  const Tensor<T> hidden = gelu(linear(layernorm(x1, p.ln2_g, p.ln2_b, ln_eps), p.fc1_w, p.fc1_b));
  TokenSequence<T> out = z;
  out.tokens = add(x1, linear(hidden, p.fc2_w, p.fc2_b));
  return out;
}

template <typename T>
TokenSequence<T> drop_cls(const TokenSequence<T>& z) {
  if (!z.has_cls) throw ContractError("drop_cls on a sequence without [CLS]");
  std::vector<std::size_t> rows(z.count() - 1);
  std::iota(rows.begin(), rows.end(), std::size_t{1});
  TokenSequence<T> out;
  out.tokens = gather_rows(z.tokens, rows);
  out.positions.assign(z.positions.begin() + 1, z.positions.end());
  out.has_cls = false;
  return out;
}

}  // namespace scd
