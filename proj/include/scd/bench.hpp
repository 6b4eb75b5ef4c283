#pragma once

// Analytic MAC counting, wall-clock throughput, and pruning-depth maps.
//
// One MAC is one multiply-accumulate. Softmax, normalization and activation
// work is not counted.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "scd/model.hpp"

namespace scd {

struct MacReport {
  double r = 0.0;
  std::vector<std::size_t> block_tokens;  // tokens (incl. [CLS]) entering each encoder block
  std::vector<double> block_macs;
  double patch_embed = 0.0;
  double score_nets = 0.0;
  double encoder_total = 0.0;  // patch_embed + blocks + score nets
  double completion_total = 0.0;
  double decoder_total = 0.0;
  double grand_total = 0.0;
};

/// MSA: 4 n C^2 (projections) + 2 n^2 C (scores and weighted sum); MLP: 8 n C^2.
inline double transformer_block_macs(double n, double c) { return 4 * n * c * c + 2 * n * n * c + 8 * n * c * c; }

inline MacReport count_macs(const ModelConfig& cfg, std::optional<double> r_override = std::nullopt) {
  const auto& e = cfg.encoder;
  const double r = r_override.value_or(e.r);
  const auto chain = cfg.token_chain_for(r);
  const double c = static_cast<double>(e.dim);
  const double n_full = static_cast<double>(e.num_tokens());
  const double p3 = static_cast<double>(e.patch * e.patch * e.patch);

  MacReport m;
  m.r = r;
  m.patch_embed = n_full * p3 * static_cast<double>(e.in_channels) * c;
  std::size_t stage = 0;
  for (std::size_t i = 0; i < e.depth; ++i) {
    const std::size_t n = chain[stage] + 1;
    m.block_tokens.push_back(n);
    m.block_macs.push_back(transformer_block_macs(static_cast<double>(n), c));
    if (stage < e.stp_after.size() && e.stp_after[stage] == i + 1) {
      const double body = static_cast<double>(chain[stage]);
      const double hidden = std::max(1.0, std::floor(c / 4));
      m.score_nets += body * c * c + body * 2 * c * hidden + body * hidden;
      ++stage;
    }
  }
  m.encoder_total = m.patch_embed + m.score_nets;
  for (double b : m.block_macs) m.encoder_total += b;

  m.completion_total = static_cast<double>(cfg.mta.depth) * transformer_block_macs(n_full, c);

  const auto& ch = cfg.decoder.channels;
  const auto grid = e.grid();
  double vox = static_cast<double>(grid[0] * grid[1] * grid[2]);
  m.decoder_total = n_full * c * static_cast<double>(ch[0]);
  for (std::size_t s = 1; s < ch.size(); ++s) {
    vox *= 8;
    m.decoder_total += n_full * c * static_cast<double>(ch[s]);  // tap projection on the token grid
    m.decoder_total += vox * 27 * static_cast<double>(ch[s - 1] * ch[s]);
  }
  m.decoder_total += vox * 27 * static_cast<double>(e.in_channels * ch.back());
  m.decoder_total += vox * static_cast<double>(ch.back() * cfg.decoder.num_classes);
  m.grand_total = m.encoder_total + m.completion_total + m.decoder_total;
  return m;
}

inline nlohmann::json to_json(const MacReport& m) {
  return {{"r", m.r},
          {"block_tokens", m.block_tokens},
          {"block_macs", m.block_macs},
          {"patch_embed", m.patch_embed},
          {"score_nets", m.score_nets},
          {"encoder_total", m.encoder_total},
          {"completion_total", m.completion_total},
          {"decoder_total", m.decoder_total},
          {"grand_total", m.grand_total}};
}

struct ThroughputReport {
  double encoder_median_s = 0.0;
  double full_median_s = 0.0;
  double encoder_imgs_per_s = 0.0;
  double full_imgs_per_s = 0.0;
  std::size_t iters = 0;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Batch size 1, inference mode. `full` also times completion and decoding.
template <typename T>
ThroughputReport measure_throughput(const ScdModel<T>& model, const VolumeSample& volume, std::size_t warmup,
                                    std::size_t iters, bool full = true) {
  if (warmup < 1) throw ParameterError("throughput: warmup must be >= 1");
  if (iters < 1) throw ParameterError("throughput: iters must be >= 1");
  NoGradGuard no_grad;
  using Clock = std::chrono::steady_clock;
  auto time = [&](auto&& fn) {
    for (std::size_t i = 0; i < warmup; ++i) fn();
    std::vector<double> samples;
    for (std::size_t i = 0; i < iters; ++i) {
      const auto t0 = Clock::now();
      fn();
      samples.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    return median(std::move(samples));
  };
  ThroughputReport rep;
  rep.iters = iters;
  rep.encoder_median_s = time([&] { (void)model.encode(volume); });
  rep.encoder_imgs_per_s = 1.0 / rep.encoder_median_s;
  if (full) {
    rep.full_median_s = time([&] { (void)model.forward(volume); });
    rep.full_imgs_per_s = 1.0 / rep.full_median_s;
  }
  return rep;
}

inline nlohmann::json to_json(const ThroughputReport& t) {
  return {{"encoder_median_s", t.encoder_median_s},
          {"full_median_s", t.full_median_s},
          {"encoder_imgs_per_s", t.encoder_imgs_per_s},
          {"full_imgs_per_s", t.full_imgs_per_s},
          {"iters", t.iters}};
}

/// Per-patch index of the STP that pruned it (1-based); never-pruned patches
/// carry `sentinel` = stp_count + 1, so larger means pruned later.
struct DepthMap {
  Extents grid{0, 0, 0};
  std::size_t stp_count = 0;
  std::vector<std::uint32_t> depth;

  std::uint32_t sentinel() const { return static_cast<std::uint32_t>(stp_count + 1); }

  std::vector<std::size_t> histogram() const {
    std::vector<std::size_t> h(stp_count + 2, 0);
    for (auto d : depth) ++h[d];
    return h;
  }
};

template <typename T>
DepthMap depth_map_from(const std::vector<PruneRecord<T>>& records, const ModelConfig& cfg) {
  DepthMap m;
  m.grid = cfg.encoder.grid();
  m.stp_count = cfg.num_stp();
  m.depth.assign(cfg.encoder.num_tokens(), m.sentinel());
  for (const auto& rec : records)
    for (auto p : rec.pruned_positions) m.depth[static_cast<std::size_t>(p)] = static_cast<std::uint32_t>(rec.stp_index);
  return m;
}

/// Inference-mode encoding of `volume`, mapped to pruning depth per patch.
template <typename T>
DepthMap export_depth_map(const ScdModel<T>& model, const VolumeSample& volume) {
  NoGradGuard no_grad;
  return depth_map_from(model.encode(volume).records, model.config());
}

/// Plain-text form: header lines then one row of integers per (d0, d1) pair.
inline void write_depth_map(const DepthMap& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out << "# scd depth map\n";
  out << "grid " << m.grid[0] << ' ' << m.grid[1] << ' ' << m.grid[2] << '\n';
  out << "stp_count " << m.stp_count << '\n';
  out << "sentinel " << m.sentinel() << '\n';
  std::size_t i = 0;
  for (std::size_t a = 0; a < m.grid[0]; ++a)
    for (std::size_t b = 0; b < m.grid[1]; ++b) {
      for (std::size_t c = 0; c < m.grid[2]; ++c) out << (c ? " " : "") << m.depth[i++];
      out << '\n';
    }
  if (!out) throw FileError("write failure on '" + path + "'");
}

inline DepthMap read_depth_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open depth map '" + path + "'");
  std::string line, key;
  std::getline(in, line);
  DepthMap m;
  std::uint32_t sentinel = 0;
  in >> key >> m.grid[0] >> m.grid[1] >> m.grid[2] >> key >> m.stp_count >> key >> sentinel;
  m.depth.resize(m.grid[0] * m.grid[1] * m.grid[2]);
  for (auto& d : m.depth) in >> d;
  if (!in || sentinel != m.sentinel()) throw FileError("malformed depth map '" + path + "'");
  return m;
}

/// ASCII PGM with d0 slices stacked vertically; darker = pruned later.
inline void write_depth_pgm(const DepthMap& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  const std::size_t width = m.grid[2], height = m.grid[0] * m.grid[1];
  out << "P2\n" << width << ' ' << height << "\n255\n";
  const double top = static_cast<double>(m.sentinel());
  for (std::size_t row = 0; row < height; ++row) {
    for (std::size_t c = 0; c < width; ++c) {
      const double level = static_cast<double>(m.depth[row * width + c]) / top;
      out << (c ? " " : "") << static_cast<int>(std::lround(255.0 * (1.0 - level)));
    }
    out << '\n';
  }
  if (!out) throw FileError("write failure on '" + path + "'");
}

}  // namespace scd
