// cvlm: benchmark, verification, distillation and cost-model front end.
//
// Exit codes: 0 success, 1 verification failure or runtime error, 2 config
// or usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cvlm/bench/config.hpp"
#include "cvlm/bench/report.hpp"
#include "cvlm/bench/suite.hpp"
#include "cvlm/distill/train.hpp"
#include "cvlm/model/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace cvlm;
using namespace cvlm::bench;

namespace {

constexpr int kVerifyFailed = 1;
constexpr int kConfigError = 2;

// Options shared by every subcommand. Named flags are applied after the
// positional key=value overrides, so `--runs 5 runs=7` runs 5 times.
struct Common {
  std::string config;
  std::string out = ".";
  std::vector<std::string> overrides;
  std::optional<std::size_t> runs, warmup, steps;
  std::optional<std::uint64_t> seed;
  std::string pipelines, precision;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "config file (key = value lines)");
    app->add_option("--out", out, "output directory");
    app->add_option("--runs", runs, "timed runs R");
    app->add_option("--warmup", warmup, "discarded warmup runs W");
    app->add_option("--steps", steps, "decode steps per run");
    app->add_option("--seed", seed, "model seed");
    app->add_option("--pipelines", pipelines, "comma list of dense,civic,posthoc_restore,posthoc_propagate");
    app->add_option("--precision", precision, "f32 or f64");
    app->add_option("overrides", overrides, "key=value overrides");
  }

  BenchConfig load() const {
    BenchConfig cfg = config.empty() ? BenchConfig{} : load_config(config);
    std::vector<std::string> all = overrides;
    if (runs) all.push_back("runs=" + std::to_string(*runs));
    if (warmup) all.push_back("warmup=" + std::to_string(*warmup));
    if (steps) all.push_back("steps=" + std::to_string(*steps));
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    if (!pipelines.empty()) all.push_back("pipelines=" + pipelines);
    if (!precision.empty()) all.push_back("precision=" + precision);
    apply_overrides(cfg, all);
    cfg.validate();
    return cfg;
  }

  fs::path out_dir() const {
    fs::create_directories(out);
    return out;
  }
};

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(bench::detail::parse_number<double>(bench::detail::trim(item)));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--values: ") + e.what());
    }
  }
  if (out.empty()) throw ConfigError("--values: empty list");
  return out;
}

int bench_run(const Common& c) {
  const auto cfg = c.load();
  const auto dir = c.out_dir();
  std::cerr << "suite (" << to_string(cfg.precision) << ", " << cfg.steps << " decode steps)\n";
  const auto result = run_suite(cfg, &std::cerr);
  std::ostringstream csv, runs;
  write_report_csv(csv, result);
  write_runs_csv(runs, result);
  write_text((dir / "report.csv").string(), csv.str());
  write_text((dir / "runs.csv").string(), runs.str());
  write_text((dir / "report.json").string(), report_json(result).dump(2) + "\n");
  print_summary(std::cout, result);
  std::cout << "wrote " << (dir / "report.csv").string() << ", report.json, runs.csv\n";
  return 0;
}

int bench_verify(const Common& c) {
  const auto cfg = c.load();
  const auto v = verify_ratios(cfg);
  std::cout << v;
  return v.ok() ? 0 : kVerifyFailed;
}

int bench_sweep(const Common& c, const std::string& axis_name, const std::string& values) {
  const auto cfg = c.load();
  const auto axis = parse_axis(axis_name);
  const auto vals = parse_values(values);
  const auto dir = c.out_dir();
  const auto s = sweep(cfg, axis, vals, &std::cerr, &std::cerr);
  std::ostringstream csv;
  write_sweep_csv(csv, s);
  write_text((dir / "sweep.csv").string(), csv.str());
  write_text((dir / "sweep.json").string(), sweep_json(s).dump(2) + "\n");
  std::cout << s.points.size() << " points, " << s.skipped.size() << " skipped; wrote "
            << (dir / "sweep.csv").string() << '\n';
  return 0;
}

int distill_train(const Common& c) {
  const auto cfg = c.load();
  const auto dir = c.out_dir();
  const auto theta = bench_weights(cfg);
  auto phi = bench_params(cfg, theta);
  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  metrics << "step,train_loss,heldout_loss\n";
  metrics.precision(17);
  auto state = distill::train(theta, std::move(phi), cfg.model, cfg.distill, [&](const distill::TrainRecord& r) {
    metrics << r.step << ',' << r.train_loss << ',' << r.heldout_loss << '\n';
    if (r.step % 20 == 0 || r.step == cfg.distill.steps)
      std::cerr << "step " << r.step << "  train " << r.train_loss << "  held-out " << r.heldout_loss << '\n';
  });
  TensorMap tensors;
  collect(tensors, state.phi);
  save_tensors((dir / "phi.json").string(), tensors);
  const auto& h = state.history;
  std::cout << "held-out KL " << h.front().heldout_loss << " -> " << h.back().heldout_loss << " (ratio "
            << h.back().heldout_loss / h.front().heldout_loss << "); wrote " << (dir / "metrics.csv").string()
            << " and phi.json\n";
  return 0;
}

void print_breakdown(const char* name, const cost::CostBreakdown& b) {
  std::cout << std::left << std::setw(9) << name << std::right << std::scientific << std::setprecision(4)
            << " attn " << b.visual_attention << "  prefill " << b.llm_prefill << "  kv " << b.kv_cache << "  decode "
            << b.decode << "  total " << b.total() << std::defaultfloat << '\n';
}

int cost_predict(const Common& c, const std::vector<std::string>& fit_reports) {
  const auto cfg = c.load();
  const auto dense = cost::dense_cost(cfg.model, cfg.cost, cfg.steps);
  const auto compact = cost::compact_cost(cfg.model, cfg.cost, cfg.steps);
  print_breakdown("dense", dense);
  print_breakdown("compact", compact);
  std::cout << "attention interaction ratio " << cost::attention_ratio(cfg.model) << "\nkv cache ratio "
            << cost::cache_ratio(cfg.model) << "\nprefill ratio " << cost::prefill_ratio(cfg.model)
            << "\ncompact/dense modeled " << compact.total() / dense.total() << '\n';
  if (cfg.omega_max)
    std::cout << "budget " << *cfg.omega_max << (cost::within_budget(compact, cfg.omega_max) ? " met" : " exceeded") << '\n';
  if (fit_reports.empty()) return 0;

  // Refit α, β, γ (ms per unit) from measured dense and civic medians.
  std::vector<FitSample> samples;
  std::vector<std::string> labels;
  for (const auto& path : fit_reports) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open report '" + path + "'");
    const auto doc = nlohmann::json::parse(in);
    BenchConfig rc;
    std::size_t line = 0;
    for (const auto& [k, v] : doc.at("config").items())
      apply_assignment(rc, k + "=" + v.get<std::string>(), path, ++line);
    for (const auto& p : doc.at("pipelines")) {
      const auto model = p.at("model").get<std::string>();
      if (model != kDense && model != kCivic) continue;
      const cost::CostCoefficients one{};
      FitSample s;
      s.units = model == kDense ? cost::dense_cost(rc.model, one, rc.steps) : cost::compact_cost(rc.model, one, rc.steps);
      s.measured_ms = p.at("timing_ms").at("total").at("median").get<double>() -
                      p.at("timing_ms").at("overhead").at("median").get<double>();
      samples.push_back(s);
      labels.push_back(path + ":" + model);
    }
  }
  const auto k = fit_coefficients(samples);
  std::cout << "fit over " << samples.size() << " medians: alpha " << k.alpha << "  beta " << k.beta << "  gamma "
            << k.gamma << " (ms per unit)\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& u = samples[i].units;
    const double pred = k.alpha * u.visual_attention + k.beta * (u.llm_prefill + u.decode) + k.gamma * u.kv_cache;
    std::cout << "  " << labels[i] << "  measured " << samples[i].measured_ms << " ms  predicted " << pred << " ms\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compact visual inference: benchmarks, verification, distillation, cost model"};
  app.require_subcommand(1);

  auto* bench = app.add_subcommand("bench", "latency suites and law checks");
  bench->require_subcommand(1);
  Common run_opts, verify_opts, sweep_opts, train_opts, cost_opts;
  auto* run = bench->add_subcommand("run", "warmup + timed runs per pipeline; writes report.csv/json");
  run_opts.attach(run);
  auto* verify = bench->add_subcommand("verify", "exact MAC and cache-byte ratio checks");
  verify_opts.attach(verify);
  auto* sweep_cmd = bench->add_subcommand("sweep", "one suite per value of C, rho_min or S");
  sweep_opts.attach(sweep_cmd);
  std::string axis, values;
  sweep_cmd->add_option("--axis", axis, "C, rho_min or S")->required();
  sweep_cmd->add_option("--values", values, "comma list")->required();

  auto* distill = app.add_subcommand("distill", "compact-pathway distillation");
  distill->require_subcommand(1);
  auto* train = distill->add_subcommand("train", "train phi; writes metrics.csv and phi.json");
  train_opts.attach(train);

  auto* cost_cmd = app.add_subcommand("cost", "closed-form cost model");
  cost_cmd->require_subcommand(1);
  auto* predict = cost_cmd->add_subcommand("predict", "modeled costs and ratios for a config");
  cost_opts.attach(predict);
  std::vector<std::string> fit_reports;
  predict->add_option("--fit", fit_reports, "report.json files to fit alpha/beta/gamma against");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (run->parsed()) return bench_run(run_opts);
    if (verify->parsed()) return bench_verify(verify_opts);
    if (sweep_cmd->parsed()) return bench_sweep(sweep_opts, axis, values);
    if (train->parsed()) return distill_train(train_opts);
    if (predict->parsed()) return cost_predict(cost_opts, fit_reports);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
