#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's differentiable ops.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "scd/scd.hpp"

namespace oracle {

using Vec = std::vector<double>;

/// Central-difference gradient of f at x.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-6) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_diff(const Vec& a, const Vec& b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  return worst;
}

/// Checks backward() of a scalar-valued graph builder against finite
/// differences with respect to every coordinate of every input.
inline double autodiff_vs_fd(const std::function<scd::Tensor<double>(const std::vector<scd::Tensor<double>>&)>& build,
                             const std::vector<scd::Shape>& shapes, const std::vector<Vec>& values,
                             double h = 1e-6, double floor = 1e-6) {
  std::vector<scd::Tensor<double>> inputs;
  for (std::size_t i = 0; i < shapes.size(); ++i) inputs.emplace_back(shapes[i], values[i], true);
  build(inputs).backward();
  double worst = 0.0;
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    const Vec analytic(inputs[t].grad().begin(), inputs[t].grad().end());
    auto f = [&](const Vec& x) {
      std::vector<scd::Tensor<double>> probe;
      for (std::size_t i = 0; i < shapes.size(); ++i) probe.emplace_back(shapes[i], i == t ? x : values[i]);
      return build(probe).item();
    };
    worst = std::max(worst, max_rel_diff(analytic, fd_gradient(f, values[t], h), floor));
  }
  return worst;
}

inline Vec uniform_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  scd::Rng rng(seed);
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Plain triple-loop matrix product of row-major [m, k] and [k, n].
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

/// Direct same-padded 3D convolution, channel-last, weights [k^3, ci, co].
inline Vec conv3d(const Vec& x, const Vec& w, std::size_t d0, std::size_t d1, std::size_t d2, std::size_t ci,
                  std::size_t co, int k) {
  Vec y(d0 * d1 * d2 * co, 0.0);
  const int pad = k / 2;
  for (int a = 0; a < static_cast<int>(d0); ++a)
    for (int b = 0; b < static_cast<int>(d1); ++b)
      for (int c = 0; c < static_cast<int>(d2); ++c)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = 0.0;
          for (int p = 0; p < k; ++p)
            for (int q = 0; q < k; ++q)
              for (int r = 0; r < k; ++r) {
                const int ia = a + p - pad, ib = b + q - pad, ic = c + r - pad;
                if (ia < 0 || ib < 0 || ic < 0 || ia >= static_cast<int>(d0) || ib >= static_cast<int>(d1) ||
                    ic >= static_cast<int>(d2))
                  continue;
                const std::size_t tap = static_cast<std::size_t>((p * k + q) * k + r);
                const std::size_t iv = (static_cast<std::size_t>(ia) * d1 + static_cast<std::size_t>(ib)) * d2 +
                                       static_cast<std::size_t>(ic);
                for (std::size_t i = 0; i < ci; ++i) acc += x[iv * ci + i] * w[(tap * ci + i) * co + o];
              }
          y[((static_cast<std::size_t>(a) * d1 + static_cast<std::size_t>(b)) * d2 + static_cast<std::size_t>(c)) *
                co +
            o] = acc;
        }
  return y;
}

/// Analytic MACs of the encoder, written out layer by layer from the
/// architecture description (projection widths, attention, MLP ratio 4,
/// score network widths).
inline double encoder_macs(std::size_t n_tokens, std::size_t c, std::size_t depth, std::size_t patch,
                           std::size_t in_channels, const std::vector<std::size_t>& stp_after, double r) {
  double total = static_cast<double>(n_tokens) * std::pow(static_cast<double>(patch), 3) *
                 static_cast<double>(in_channels) * static_cast<double>(c);
  std::size_t body = n_tokens, next = 0;
  const double cd = static_cast<double>(c);
  for (std::size_t layer = 1; layer <= depth; ++layer) {
    const double n = static_cast<double>(body + 1);
    const double q = n * cd * cd, k = n * cd * cd, v = n * cd * cd, o = n * cd * cd;
    const double scores = n * n * cd, weighted = n * n * cd;
    const double fc1 = n * cd * 4 * cd, fc2 = n * 4 * cd * cd;
    total += q + k + v + o + scores + weighted + fc1 + fc2;
    if (next < stp_after.size() && stp_after[next] == layer) {
      const double b = static_cast<double>(body);
      const double hidden = static_cast<double>(std::max<std::size_t>(1, c / 4));
      total += b * cd * cd + b * 2 * cd * hidden + b * hidden * 1;
      body = static_cast<std::size_t>(std::lround((1.0 - r) * static_cast<double>(body)));
      ++next;
    }
  }
  return total;
}

}  // namespace oracle

namespace testcfg {

/// 16^3 volume, patch 4 (64 tokens), narrow encoder; trains in seconds.
inline scd::ModelConfig tiny(double r = 0.5) {
  scd::ModelConfig cfg;
  auto& e = cfg.encoder;
  e.extents = {16, 16, 16};
  e.patch = 4;
  e.dim = 16;
  e.depth = 4;
  e.heads = 2;
  e.stp_after = {2};
  e.r = r;
  cfg.decoder.channels = {8, 4, 4};
  cfg.infer.window = e.extents;
  cfg.train.steps = 20;
  cfg.train.dataset_size = 4;
  cfg.train.eval_size = 2;
  return cfg;
}

}  // namespace testcfg
