// scd: train / infer / bench / gradcheck / sample-check / depth-map.
//
// Exit codes: 0 all checks passed, 1 a tolerance or monotonicity check
// failed, 2 a runtime error (bad config, unreadable file, ...), and CLI11's
// own codes for usage errors. A JSON report is written in every case.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "scd/scd.hpp"

namespace {

using nlohmann::json;

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string report_path;
};

scd::ModelConfig load_config(const Common& c) {
  json root = c.config_path.empty() ? json::object() : scd::load_config_json(c.config_path);
  for (const auto& s : c.sets) scd::apply_override(root, s);
  if (const char* env = std::getenv("SCD_SEED")) {
    const std::string text = env;
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
      throw scd::ConfigError("SCD_SEED must be a non-negative integer, got '" + text + "'");
    root["seed"] = std::stoull(text);
  }
  return scd::parse_config(root);
}

void write_report(const std::string& path, const json& report) {
  std::ofstream out(path);
  if (!out) throw scd::FileError("cannot write report '" + path + "'");
  out << report.dump(2) << '\n';
}

std::vector<double> parse_ratio_list(std::string text) {
  if (text.rfind("r=", 0) == 0) text = text.substr(2);
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw scd::ConfigError("--compare: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw scd::ConfigError("--compare needs at least one ratio");
  return out;
}

scd::VolumeSample synthetic_volume(const scd::ModelConfig& cfg, std::uint64_t seed, const scd::Extents& extents) {
  return scd::generate_synthetic(seed, extents, cfg.decoder.num_classes, cfg.encoder.in_channels);
}

// ---------------------------------------------------------------------------

bool run_train(const scd::ModelConfig& cfg, const std::string& checkpoint, json& report) {
  scd::ScdModel<float> model(cfg);
  const auto data = scd::make_dataset(cfg);
  const std::size_t steps = scd::total_steps(cfg.train);
  const auto result = scd::train(model, data, [&](std::size_t step, double loss) {
    if ((step + 1) % 25 == 0 || step + 1 == steps)
      std::cerr << "step " << step + 1 << "/" << steps << " loss " << loss << '\n';
  });
  scd::save_checkpoint(checkpoint, model.params());
  report["checkpoint"] = checkpoint;
  report["metrics"] = scd::to_json(result.report);
  std::cout << "mean DSC " << result.report.mean_dsc.value_or(0.0) << ", checkpoint " << checkpoint << '\n';
  return true;
}

bool run_infer(const scd::ModelConfig& cfg, const std::string& checkpoint, std::uint64_t volume_seed,
               std::vector<std::size_t> extents, json& report) {
  scd::ScdModel<float> model(cfg);
  scd::load_checkpoint(checkpoint, model.params());
  scd::Extents ext = cfg.infer.window;
  if (!extents.empty()) {
    if (extents.size() != 3) throw scd::ConfigError("--extents needs three values");
    ext = {extents[0], extents[1], extents[2]};
  }
  const auto volume = synthetic_volume(cfg, volume_seed, ext);
  const auto pred = scd::sliding_window_infer(model, volume, cfg.infer.window, cfg.infer.overlap);
  const auto metrics = scd::evaluate_segmentation(pred.labels, volume, cfg.decoder.num_classes);
  std::vector<std::size_t> counts(cfg.decoder.num_classes, 0);
  for (auto l : pred.labels) ++counts[static_cast<std::size_t>(l)];
  report["checkpoint"] = checkpoint;
  report["volume_seed"] = volume_seed;
  report["extents"] = ext;
  report["tiles"] = pred.tiles;
  report["predicted_voxels_per_class"] = counts;
  report["metrics"] = scd::to_json(metrics);
  std::cout << pred.tiles << " tiles, mean DSC " << metrics.mean_dsc.value_or(0.0) << '\n';
  return true;
}

bool run_bench(const scd::ModelConfig& cfg, const std::string& compare, std::size_t warmup, std::size_t iters,
               bool timing, json& report) {
  const auto ratios = compare.empty() ? std::vector<double>{cfg.encoder.r} : parse_ratio_list(compare);
  const auto volume = synthetic_volume(cfg, scd::derive_seed(cfg.seed, "bench"), cfg.encoder.extents);
  json rows = json::array();
  bool ok = true;
  std::vector<std::pair<double, double>> by_r;  // (r, encoder MACs)
  double base_rate = 0.0;
  for (double r : ratios) {
    auto c = cfg;
    c.encoder.r = r;
    scd::validate(c);
    json row;
    row["r"] = r;
    row["token_chain"] = c.token_chain();
    const auto macs = scd::count_macs(c);
    row["macs"] = scd::to_json(macs);
    by_r.emplace_back(r, macs.encoder_total);
    if (timing) {
      scd::ScdModel<float> model(c);
      const auto t = scd::measure_throughput(model, volume, warmup, iters);
      row["throughput"] = scd::to_json(t);
      if (base_rate == 0.0) base_rate = t.encoder_imgs_per_s;
      row["encoder_speedup_vs_first"] = t.encoder_imgs_per_s / base_rate;
    }
    std::cout << "r=" << r << " encoder GMACs " << macs.encoder_total / 1e9;
    if (timing) std::cout << " encoder img/s " << row["throughput"]["encoder_imgs_per_s"].get<double>();
    std::cout << '\n';
    rows.push_back(row);
  }
  std::sort(by_r.begin(), by_r.end());
  for (std::size_t i = 1; i < by_r.size(); ++i)
    if (by_r[i].first > by_r[i - 1].first && !(by_r[i].second < by_r[i - 1].second)) ok = false;
  report["reports"] = rows;
  report["encoder_macs_strictly_decreasing"] = ok;
  if (!ok) std::cout << "encoder MACs are not strictly decreasing in r\n";
  return ok;
}

/// Small f64 graphs over the differentiable primitives, then the whole pipeline.
bool run_gradcheck(const scd::ModelConfig& cfg, std::size_t per_tensor, double tol, json& report) {
  using T = scd::Tensor<double>;
  scd::Rng rng(cfg.seed);
  auto random = [&](scd::Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return T(std::move(shape), std::move(v));
  };
  json suites = json::array();
  bool ok = true;
  auto record = [&](const scd::GradcheckResult& r) {
    const bool pass = r.max_rel_err < tol;
    ok = ok && pass;
    suites.push_back({{"name", r.name}, {"max_rel_err", r.max_rel_err}, {"checked", r.checked}, {"worst", r.worst},
                      {"pass", pass}});
    std::cout << (pass ? "ok   " : "FAIL ") << r.name << " max rel err " << r.max_rel_err << '\n';
  };

  {
    T a = random({3, 4}), b = random({4, 5});
    record(scd::gradcheck("matmul", [&] { return scd::sum_all(scd::gelu(scd::matmul(a, b))); }, {{"a", a}, {"b", b}}));
  }
  {
    T x = random({4, 6}), w = random({4, 6});
    record(scd::gradcheck(
        "softmax", [&] { return scd::sum_all(scd::mul(scd::softmax(x, -1, 0.5), w)); }, {{"x", x}}));
  }
  {
    T x = random({5, 8}), g = random({8}), b = random({8}), w = random({8, 3}), c = random({3});
    record(scd::gradcheck("layernorm+linear",
                          [&] { return scd::sum_all(scd::sigmoid(scd::linear(scd::layernorm(x, g, b, 1e-6), w, c))); },
                          {{"x", x}, {"g", g}, {"b", b}, {"w", w}, {"c", c}}));
  }
  {
    T x = random({2, 2, 2, 3}), w = random({27, 3, 2});
    record(scd::gradcheck("conv3d+upsample", [&] {
      const T y = scd::conv3d(scd::upsample_nearest(x, 2), w);
      return scd::sum_all(scd::mul(y, y));
    }, {{"x", x}, {"w", w}}));
  }
  {
    T x = random({6, 4});
    record(scd::gradcheck("log+exp", [&] {
      return scd::sum_all(scd::log(scd::shift(scd::exp(x), 0.5)));
    }, {{"x", x}}));
  }
  record(scd::pipeline_gradcheck(cfg, per_tensor));
  report["suites"] = suites;
  report["tolerance"] = tol;
  return ok;
}

bool run_sample_check(std::size_t n, std::size_t k, std::size_t trials, double tol, std::uint64_t seed,
                      json& report) {
  scd::Rng rng(seed);
  const auto equal = scd::inclusion_frequencies(std::vector<double>(n, 0.5), k, trials, rng);
  const double expect = static_cast<double>(k) / static_cast<double>(n);
  double worst = 0.0;
  for (double p : equal) worst = std::max(worst, std::abs(p - expect));
  std::vector<double> distinct(n);
  for (std::size_t i = 0; i < n; ++i) distinct[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  const auto ranked = scd::inclusion_frequencies(distinct, k, trials, rng);
  const bool monotone = std::is_sorted(ranked.begin(), ranked.end(), std::less_equal<>());
  report["expected"] = expect;
  report["equal_score_frequencies"] = equal;
  report["max_deviation"] = worst;
  report["tolerance"] = tol;
  report["distinct_scores"] = distinct;
  report["distinct_score_frequencies"] = ranked;
  report["monotone"] = monotone;
  std::cout << "max |p - " << expect << "| = " << worst << (monotone ? ", monotone" : ", NOT monotone") << '\n';
  return worst <= tol && monotone;
}

bool run_depth_map(const scd::ModelConfig& cfg, const std::string& checkpoint, std::uint64_t volume_seed,
                   const std::string& prefix, json& report) {
  scd::ScdModel<float> model(cfg);
  if (!checkpoint.empty()) scd::load_checkpoint(checkpoint, model.params());
  const auto volume = synthetic_volume(cfg, volume_seed, cfg.encoder.extents);
  const auto map = scd::export_depth_map(model, volume);
  scd::write_depth_map(map, prefix + ".txt");
  scd::write_depth_pgm(map, prefix + ".pgm");
  const auto hist = map.histogram();
  const auto chain = cfg.token_chain();
  bool ok = hist[map.sentinel()] == chain.back();
  for (std::size_t i = 1; i < chain.size(); ++i) ok = ok && hist[i] == chain[i - 1] - chain[i];
  report["files"] = {prefix + ".txt", prefix + ".pgm"};
  report["histogram"] = hist;
  report["token_chain"] = chain;
  report["histogram_matches_chain"] = ok;
  std::cout << "wrote " << prefix << ".txt and " << prefix << ".pgm\n";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-encode / complete / dense-decode segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "JSON config file (defaults apply to omitted keys)");
  app.add_option("--set", common.sets, "Override a config key, e.g. --set encoder.r=0.75")->take_all();
  app.add_option("--report", common.report_path, "JSON report path (default <subcommand>_report.json)");

  std::string checkpoint_out = "scd.ckpt", checkpoint, compare, prefix = "depth_map";
  std::uint64_t volume_seed = 0;
  bool volume_seed_given = false;
  std::vector<std::size_t> extents;
  std::size_t warmup = 1, iters = 3, per_tensor = 2, n = 6, k = 2, trials = 100000;
  std::uint64_t sample_seed = 0;
  double grad_tol = 1e-4, sample_tol = 0.01;
  bool skip_timing = false;

  auto* train = app.add_subcommand("train", "Train on the synthetic task and save a checkpoint");
  train->add_option("--checkpoint-out", checkpoint_out, "Where to write the trained weights");

  auto* infer = app.add_subcommand("infer", "Sliding-window inference on a synthetic volume");
  infer->add_option("--checkpoint", checkpoint, "Trained weights")->required();
  auto* infer_seed = infer->add_option("--volume-seed", volume_seed, "Synthetic volume seed");
  infer->add_option("--extents", extents, "Volume extents (default: the window)")->expected(3);

  auto* bench = app.add_subcommand("bench", "MAC counts and throughput per pruning ratio");
  bench->add_option("--compare", compare, "Ratios to compare, e.g. r=0,0.5,0.9");
  bench->add_option("--warmup", warmup, "Untimed iterations")->check(CLI::PositiveNumber);
  bench->add_option("--iters", iters, "Timed iterations")->check(CLI::PositiveNumber);
  bench->add_flag("--skip-timing", skip_timing, "Report MACs only");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks at f64");
  grad->add_option("--per-tensor", per_tensor, "Coordinates sampled per parameter tensor (0 = all)");
  grad->add_option("--tol", grad_tol, "Maximum relative error");

  auto* sample = app.add_subcommand("sample-check", "Monte-Carlo inclusion probabilities of the sampler");
  sample->add_option("--n", n, "Token count")->check(CLI::PositiveNumber);
  sample->add_option("--k", k, "Kept count")->check(CLI::PositiveNumber);
  sample->add_option("--trials", trials, "Draws")->check(CLI::PositiveNumber);
  sample->add_option("--tol", sample_tol, "Allowed deviation from K/n");
  auto* sample_seed_opt = sample->add_option("--seed", sample_seed, "Sampler seed (default: config seed)");

  auto* depth = app.add_subcommand("depth-map", "Write the per-patch pruning depth as text and PGM");
  depth->add_option("--checkpoint", checkpoint, "Trained weights (random init when omitted)");
  auto* depth_seed = depth->add_option("--volume-seed", volume_seed, "Synthetic volume seed");
  depth->add_option("--out", prefix, "Output path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    const std::string command = subs.empty() ? "scd" : subs.front()->get_name();
    try {
      write_report(common.report_path.empty() ? command + "_report.json" : common.report_path,
                   {{"command", command}, {"ok", false}, {"usage_error", e.what()}});
    } catch (const scd::Error&) {
    }
    return app.exit(e);
  }
  volume_seed_given = infer_seed->count() > 0 || depth_seed->count() > 0;

  const std::string command = app.get_subcommands().front()->get_name();
  const std::string report_path = common.report_path.empty() ? command + "_report.json" : common.report_path;
  json report;
  report["command"] = command;
  int code = 2;
  try {
    const scd::ModelConfig cfg = load_config(common);
    report["config"] = scd::to_json(cfg);
    report["seed"] = cfg.seed;
    const std::uint64_t vseed = volume_seed_given ? volume_seed : scd::derive_seed(cfg.seed, "volume");
    bool ok = false;
    if (command == "train") ok = run_train(cfg, checkpoint_out, report);
    else if (command == "infer") ok = run_infer(cfg, checkpoint, vseed, extents, report);
    else if (command == "bench") ok = run_bench(cfg, compare, warmup, iters, !skip_timing, report);
    else if (command == "gradcheck") ok = run_gradcheck(cfg, per_tensor, grad_tol, report);
    else if (command == "sample-check")
      ok = run_sample_check(n, k, trials, sample_tol, sample_seed_opt->count() ? sample_seed : cfg.seed, report);
    else if (command == "depth-map") ok = run_depth_map(cfg, checkpoint, vseed, prefix, report);
    report["ok"] = ok;
    code = ok ? 0 : 1;
  } catch (const scd::Error& e) {
    report["ok"] = false;
    report["error"] = e.what();
    std::cerr << "error: " << e.what() << '\n';
  }
  try {
    write_report(report_path, report);
  } catch (const scd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return code;
}
