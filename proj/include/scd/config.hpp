#pragma once

// ModelConfig: the single description of architecture, training, and
// inference settings. Loaded from JSON; every omitted key takes the default
// below, and unknown keys are rejected.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "scd/errors.hpp"

namespace scd {

using Extents = std::array<std::size_t, 3>;

/// Kept-token count for a pruning ratio: nearest integer of (1 - r) * n.
inline std::size_t kept_count(std::size_t n, double r) {
  return static_cast<std::size_t>(std::lround((1.0 - r) * static_cast<double>(n)));
}

struct EncoderConfig {
  Extents extents{32, 32, 32};
  std::size_t in_channels = 1;
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t depth = 12;
  std::size_t heads = 4;
  std::vector<std::size_t> stp_after{3, 6, 9};
  double r = 0.5;
  double tau = 1.0;
  double eps = 1e-6;
  bool perturb = true;
  double ln_eps = 1e-6;

  Extents grid() const {
    return {extents[0] / patch, extents[1] / patch, extents[2] / patch};
  }
  std::size_t num_tokens() const {
    const auto g = grid();
    return g[0] * g[1] * g[2];
  }
};

struct MtaConfig {
  std::size_t depth = 1;
};

struct DecoderConfig {
  /// One width per decoder stage, coarsest first; log2(patch) + 1 entries.
  std::vector<std::size_t> channels{32, 16, 8, 4};
  std::size_t num_classes = 3;
};

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t epochs = 0;  // when > 0, overrides steps with epochs * batches per epoch
  std::size_t batch_size = 2;
  std::size_t dataset_size = 16;
  std::size_t eval_size = 4;
  double lr = 3e-3;
  std::string optimizer = "adamw";
  double layer_decay = 0.75;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t prune_warmup_steps = 0;
  bool freeze = false;
};

struct InferConfig {
  Extents window{32, 32, 32};
  double overlap = 0.5;
};

struct ModelConfig {
  EncoderConfig encoder;
  MtaConfig mta;
  DecoderConfig decoder;
  TrainConfig train;
  InferConfig infer;
  std::uint64_t seed = 0;

  std::size_t num_stp() const { return encoder.stp_after.size(); }

  /// Non-CLS token counts: [N, K_1, ..., K_S].
  std::vector<std::size_t> token_chain() const { return token_chain_for(encoder.r); }

  std::vector<std::size_t> token_chain_for(double r) const {
    std::vector<std::size_t> chain{encoder.num_tokens()};
    for (std::size_t i = 0; i < encoder.stp_after.size(); ++i)
      chain.push_back(kept_count(chain.back(), r));
    return chain;
  }

  std::size_t decoder_stages() const {
    std::size_t s = 0;
    for (std::size_t p = encoder.patch; p > 1; p >>= 1) ++s;
    return s;
  }
};

/// Throws ConfigError naming the offending key.
inline void validate(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("config key '" + key + "': " + why);
  };
  if (e.patch < 2 || (e.patch & (e.patch - 1)) != 0) fail("encoder.patch", "must be a power of two >= 2");
  for (std::size_t i = 0; i < 3; ++i) {
    if (e.extents[i] == 0 || e.extents[i] % e.patch != 0)
      fail("encoder.extents", "extent " + std::to_string(e.extents[i]) +
                                  " not divisible by patch size " + std::to_string(e.patch));
  }
  if (e.in_channels == 0) fail("encoder.in_channels", "must be >= 1");
  if (e.depth == 0) fail("encoder.depth", "must be >= 1");
  if (e.heads == 0 || e.dim % e.heads != 0) fail("encoder.heads", "must divide encoder.dim");
  if (e.dim < 4 || e.dim % 4 != 0) fail("encoder.dim", "must be a positive multiple of 4");
  for (std::size_t i = 0; i < e.stp_after.size(); ++i) {
    const auto b = e.stp_after[i];
    if (b < 1 || b > e.depth - 1)
      fail("encoder.stp_after", "insertion index " + std::to_string(b) + " outside [1, " +
                                    std::to_string(e.depth - 1) + "]");
    if (i > 0 && b <= e.stp_after[i - 1]) fail("encoder.stp_after", "must be strictly increasing");
  }
  if (!(e.r >= 0.0 && e.r < 1.0)) fail("encoder.r", "must lie in [0, 1)");
  if (!(e.tau > 0.0)) fail("encoder.tau", "must be > 0");
  if (!(e.eps > 0.0 && e.eps < 1.0)) fail("encoder.eps", "must lie in (0, 1)");
  if (!(e.ln_eps > 0.0)) fail("encoder.ln_eps", "must be > 0");
  const auto chain = cfg.token_chain();
  for (std::size_t i = 1; i < chain.size(); ++i)
    if (chain[i] < 1)
      fail("encoder.r", "STP " + std::to_string(i) + " would keep zero of " +
                            std::to_string(chain[i - 1]) + " tokens");

  if (cfg.decoder.channels.size() != cfg.decoder_stages() + 1)
    fail("decoder.channels", "needs log2(patch) + 1 = " + std::to_string(cfg.decoder_stages() + 1) +
                                 " entries");
  for (auto c : cfg.decoder.channels)
    if (c == 0) fail("decoder.channels", "widths must be >= 1");
  if (cfg.decoder.num_classes == 0) fail("decoder.num_classes", "must be >= 1");

  const auto& t = cfg.train;
  if (!(t.lr > 0.0)) fail("train.lr", "must be > 0");
  if (!(t.layer_decay > 0.0 && t.layer_decay <= 1.0)) fail("train.layer_decay", "must lie in (0, 1]");
  if (t.batch_size == 0) fail("train.batch_size", "must be >= 1");
  if (t.dataset_size == 0) fail("train.dataset_size", "must be >= 1");
  if (t.steps == 0 && t.epochs == 0) fail("train.steps", "steps or epochs must be >= 1");
  if (t.optimizer != "adamw" && t.optimizer != "sgd") fail("train.optimizer", "must be 'adamw' or 'sgd'");
  if (!(t.weight_decay >= 0.0)) fail("train.weight_decay", "must be >= 0");
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0)) fail("train.beta1", "must lie in [0, 1)");
  if (!(t.beta2 >= 0.0 && t.beta2 < 1.0)) fail("train.beta2", "must lie in [0, 1)");

  for (std::size_t i = 0; i < 3; ++i)
    if (cfg.infer.window[i] == 0 || cfg.infer.window[i] % e.patch != 0)
      fail("infer.window", "extent " + std::to_string(cfg.infer.window[i]) +
                               " not divisible by patch size");
  if (!(cfg.infer.overlap >= 0.0 && cfg.infer.overlap < 1.0)) fail("infer.overlap", "must lie in [0, 1)");
}

namespace detail {

using nlohmann::json;

class ConfigReader {
 public:
  explicit ConfigReader(const json& root) : root_(root) {
    if (!root_.is_object()) throw ConfigError("config root must be a JSON object");
  }

  template <typename F>
  void section(const std::string& name, F&& body) {
    allowed_.insert(name);
    if (!root_.contains(name)) return;
    const json& sec = root_.at(name);
    if (!sec.is_object()) throw ConfigError("config key '" + name + "': must be an object");
    std::set<std::string> keys;
    body(Section{sec, name, keys});
    for (auto it = sec.begin(); it != sec.end(); ++it)
      if (!keys.count(it.key()))
        throw ConfigError("config key '" + name + "." + it.key() + "': unknown key");
  }

  template <typename V>
  void top(const std::string& key, V& out) {
    allowed_.insert(key);
    if (root_.contains(key)) read_value(root_.at(key), key, out);
  }

  void finish() const {
    for (auto it = root_.begin(); it != root_.end(); ++it)
      if (!allowed_.count(it.key())) throw ConfigError("config key '" + it.key() + "': unknown key");
  }

  struct Section {
    const json& obj;
    const std::string& prefix;
    std::set<std::string>& keys;

    template <typename V>
    const Section& operator()(const std::string& key, V& out) const {
      keys.insert(key);
      if (obj.contains(key)) read_value(obj.at(key), prefix + "." + key, out);
      return *this;
    }
  };

  template <typename V>
  static void read_value(const json& j, const std::string& key, V& out) {
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!j.is_boolean()) throw ConfigError("must be a boolean");
        out = j.get<bool>();
      } else if constexpr (std::is_integral_v<V>) {
        if (!j.is_number_integer() || (j.is_number_integer() && j.get<long long>() < 0))
          throw ConfigError("must be a non-negative integer");
        out = j.get<V>();
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!j.is_number()) throw ConfigError("must be a number");
        out = j.get<V>();
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!j.is_string()) throw ConfigError("must be a string");
        out = j.get<std::string>();
      } else if constexpr (std::is_same_v<V, Extents>) {
        if (j.is_number_integer()) {
          std::size_t v = 0;
          read_value(j, key, v);
          out = {v, v, v};
        } else {
          if (!j.is_array() || j.size() != 3) throw ConfigError("must be an integer or [a, b, c]");
          for (std::size_t i = 0; i < 3; ++i) read_value(j[i], key, out[i]);
        }
      } else {
        if (!j.is_array()) throw ConfigError("must be an array");
        out.clear();
        for (const auto& item : j) {
          typename V::value_type v{};
          read_value(item, key, v);
          out.push_back(v);
        }
      }
    } catch (const ConfigError& err) {
      const std::string what = err.what();
      if (what.rfind("config key", 0) == 0) throw;
      throw ConfigError("config key '" + key + "': " + what);
    }
  }

 private:
  const json& root_;
  std::set<std::string> allowed_;
};

}  // namespace detail

inline ModelConfig parse_config(const nlohmann::json& root) {
  ModelConfig cfg;
  detail::ConfigReader reader(root);
  reader.section("encoder", [&](const auto& s) {
    auto& e = cfg.encoder;
    s("extents", e.extents)("in_channels", e.in_channels)("patch", e.patch)("dim", e.dim)(
        "depth", e.depth)("heads", e.heads)("stp_after", e.stp_after)("r", e.r)("tau", e.tau)(
        "eps", e.eps)("perturb", e.perturb)("ln_eps", e.ln_eps);
  });
  reader.section("mta", [&](const auto& s) { s("depth", cfg.mta.depth); });
  bool channels_given = root.is_object() && root.contains("decoder") &&
                        root["decoder"].is_object() && root["decoder"].contains("channels");
  reader.section("decoder", [&](const auto& s) {
    s("channels", cfg.decoder.channels)("num_classes", cfg.decoder.num_classes);
  });
  reader.section("train", [&](const auto& s) {
    auto& t = cfg.train;
    s("steps", t.steps)("epochs", t.epochs)("batch_size", t.batch_size)("dataset_size",
                                                                          t.dataset_size)(
        "eval_size", t.eval_size)("lr", t.lr)("optimizer", t.optimizer)("layer_decay",
                                                                         t.layer_decay)(
        "weight_decay", t.weight_decay)("beta1", t.beta1)("beta2", t.beta2)(
        "prune_warmup_steps", t.prune_warmup_steps)("freeze", t.freeze);
  });
  reader.section("infer", [&](const auto& s) {
    s("window", cfg.infer.window)("overlap", cfg.infer.overlap);
  });
  reader.top("seed", cfg.seed);
  reader.finish();

  // A non-default patch size without explicit widths gets a halving ladder.
  if (!channels_given && cfg.decoder.channels.size() != cfg.decoder_stages() + 1) {
    cfg.decoder.channels.clear();
    std::size_t w = 32;
    for (std::size_t i = 0; i <= cfg.decoder_stages(); ++i) {
      cfg.decoder.channels.push_back(w);
      w = std::max<std::size_t>(4, w / 2);
    }
  }
  validate(cfg);
  return cfg;
}

inline nlohmann::json to_json(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& t = cfg.train;
  return {
      {"encoder",
       {{"extents", e.extents},
        {"in_channels", e.in_channels},
        {"patch", e.patch},
        {"dim", e.dim},
        {"depth", e.depth},
        {"heads", e.heads},
        {"stp_after", e.stp_after},
        {"r", e.r},
        {"tau", e.tau},
        {"eps", e.eps},
        {"perturb", e.perturb},
        {"ln_eps", e.ln_eps}}},
      {"mta", {{"depth", cfg.mta.depth}}},
      {"decoder", {{"channels", cfg.decoder.channels}, {"num_classes", cfg.decoder.num_classes}}},
      {"train",
       {{"steps", t.steps},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"dataset_size", t.dataset_size},
        {"eval_size", t.eval_size},
        {"lr", t.lr},
        {"optimizer", t.optimizer},
        {"layer_decay", t.layer_decay},
        {"weight_decay", t.weight_decay},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"prune_warmup_steps", t.prune_warmup_steps},
        {"freeze", t.freeze}}},
      {"infer", {{"window", cfg.infer.window}, {"overlap", cfg.infer.overlap}}},
      {"seed", cfg.seed},
  };
}

/// Applies "a.b.c=value" to a JSON object. The value is parsed as JSON when
/// possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline nlohmann::json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
  return j;
}

inline ModelConfig parse_config_file(const std::string& path) {
  return parse_config(load_config_json(path));
}

}  // namespace scd
