#pragma once

// Multi-layer token assembly: put every pruned intermediate token back at its
// grid position (tagged with the block token of the STP that pruned it), fill
// the rest from the encoder output, add sin-cos position embeddings, and
// refine with completion blocks.

#include <cmath>
#include <string>
#include <vector>

#include "scd/encoder.hpp"
#include "scd/stp.hpp"

namespace scd {

/// Row p, channels (2j, 2j+1) = (sin(p w_j), cos(p w_j)), w_j = 10000^(-2j/C).
template <typename T>
Tensor<T> sincos_pos_embed(std::size_t n, std::size_t c) {
  if (c == 0 || c % 2 != 0) throw ConfigError("sin-cos embedding needs an even width, got " + std::to_string(c));
  std::vector<T> table(n * c);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t j = 0; j < c / 2; ++j) {
      const double omega = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(c));
      const double angle = static_cast<double>(p) * omega;
      table[p * c + 2 * j] = static_cast<T>(std::sin(angle));
      table[p * c + 2 * j + 1] = static_cast<T>(std::cos(angle));
    }
  return Tensor<T>({n, c}, std::move(table));
}

template <typename T>
struct MtaParams {
  std::vector<Tensor<T>> block_tokens;  // one [C] vector per STP
  std::vector<BlockParams<T>> blocks;
  Tensor<T> pos_embed;  // fixed [N, C]

  static MtaParams create(ParamStore<T>& store, std::size_t num_stp, std::size_t depth, std::size_t n,
                          std::size_t dim, std::size_t heads) {
    MtaParams p;
    for (std::size_t k = 1; k <= num_stp; ++k)
      p.block_tokens.push_back(store.add("mta.blk." + std::to_string(k), {dim}, {Init::Normal, 0.02}));
    for (std::size_t j = 0; j < depth; ++j)
      p.blocks.push_back(BlockParams<T>::create(store, "mta.blocks." + std::to_string(j), dim, heads));
    p.pos_embed = sincos_pos_embed<T>(n, dim);
    return p;
  }
};

/// Restores a length-N sequence in grid order from the pruning records and
/// the CLS-free encoder output.
template <typename T>
TokenSequence<T> assemble(const std::vector<PruneRecord<T>>& records, const TokenSequence<T>& z_last,
                          std::size_t n, const std::vector<Tensor<T>>& block_tokens) {
  if (z_last.has_cls) throw ContractError("assemble: drop [CLS] before assembly");
  if (block_tokens.size() < records.size())
    throw ContractError("assemble: " + std::to_string(records.size()) + " records but only " +
                        std::to_string(block_tokens.size()) + " block tokens");

  std::vector<Tensor<T>> parts;
  std::vector<std::int64_t> positions;
  for (const auto& rec : records) {
    if (rec.pruned_positions.empty()) continue;
    if (rec.stp_index < 1 || rec.stp_index > block_tokens.size())
      throw AssemblyError("record has STP index " + std::to_string(rec.stp_index));
    parts.push_back(add(rec.pruned_tokens, block_tokens[rec.stp_index - 1]));
    positions.insert(positions.end(), rec.pruned_positions.begin(), rec.pruned_positions.end());
  }
  parts.push_back(z_last.tokens);
  positions.insert(positions.end(), z_last.positions.begin(), z_last.positions.end());

  std::vector<int> hits(n, 0);
  std::vector<std::int64_t> bad;
  for (auto p : positions) {
    if (p < 0 || static_cast<std::size_t>(p) >= n) bad.push_back(p);
    else if (++hits[static_cast<std::size_t>(p)] == 2) bad.push_back(p);
  }
  for (std::size_t p = 0; p < n; ++p)
    if (hits[p] == 0) bad.push_back(static_cast<std::int64_t>(p));
  if (!bad.empty()) {
    std::string list;
    for (std::size_t i = 0; i < bad.size() && i < 16; ++i) list += (i ? ", " : "") + std::to_string(bad[i]);
    if (bad.size() > 16) list += ", ...";
    throw AssemblyError("positions do not partition [0, " + std::to_string(n) +
                        "); offending positions: " + list);
  }

  std::vector<std::size_t> targets(positions.begin(), positions.end());
  TokenSequence<T> out;
  out.tokens = scatter_rows(parts.size() == 1 ? parts[0] : concat(parts, 0), targets, n);
  out.positions.resize(n);
  std::iota(out.positions.begin(), out.positions.end(), std::int64_t{0});
  return out;
}

/// TF(assembled + E_pos).
template <typename T>
TokenSequence<T> complete(const TokenSequence<T>& assembled, const MtaParams<T>& params, T ln_eps) {
  if (assembled.tokens.shape() != params.pos_embed.shape())
    throw DimensionError("complete: assembled tokens " + to_string(assembled.tokens.shape()) +
                         " do not match position table " + to_string(params.pos_embed.shape()));
  TokenSequence<T> z = assembled;
  z.tokens = add(assembled.tokens, params.pos_embed);
  for (const auto& block : params.blocks) z = transformer_block(z, block, ln_eps);
  return z;
}

}  // namespace scd
