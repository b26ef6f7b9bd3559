#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvlm/baselines/posthoc.hpp"
#include "cvlm/bench/allocator.hpp"
#include "cvlm/bench/config.hpp"
#include "cvlm/bench/stats.hpp"
#include "cvlm/civic/compact.hpp"
#include "cvlm/costmodel/cost.hpp"
#include "cvlm/distill/synthetic.hpp"
#include "cvlm/model/checkpoint.hpp"
#include "cvlm/model/dense.hpp"

namespace cvlm::bench {

struct RouteSummary {
  std::string op;
  std::size_t elements = 0;
  Summary ms;
};

/// Everything a pipeline produced over R timed runs. Timing fields are
/// summarized; every other field must be identical across runs.
struct PipelineSummary {
  std::string model;
  std::vector<RunReport> runs;
  std::vector<baselines::RoutingOpLog> logs;  // posthoc pipelines only

  Summary total_ms, vision_enc_ms, proj_ms, prefill_ms, decode_ms, overhead_ms, residual_ms;
  std::size_t prefill_tokens = 0;
  std::size_t visual_tokens_kept = 0;
  std::uint64_t kv_cache_bytes = 0;
  std::uint64_t kv_cache_peak_bytes = 0;
  std::map<std::string, std::uint64_t> mac_counts;
  std::vector<TokenId> tokens;
  std::vector<RouteSummary> routing;
  cost::CostBreakdown modeled;  // posthoc: dense terms plus the median routing time

  /// Median prefill plus median decode. Not the median of per-run sums.
  double llm_total_ms() const { return prefill_ms.median + decode_ms.median; }
};

/// posthoc_cost == dense_cost + log.total() for one benchmarked run.
struct CostCheck {
  std::string model;
  std::size_t run = 0;
  double posthoc_total = 0;
  double expected_total = 0;

  double error() const { return std::abs(posthoc_total - expected_total); }
  bool ok() const { return error() <= 1e-9 * std::max(1.0, std::abs(expected_total)); }
};

struct SuiteResult {
  BenchConfig cfg;
  std::vector<PipelineSummary> pipelines;
  std::vector<CostCheck> cost_checks;

  const PipelineSummary* find(std::string_view model) const {
    for (const auto& p : pipelines)
      if (p.model == model) return &p;
    return nullptr;
  }
  const PipelineSummary& at(std::string_view model) const {
    const auto* p = find(model);
    if (p == nullptr) throw std::out_of_range("suite has no pipeline '" + std::string(model) + "'");
    return *p;
  }
};

/// θ from the seed, φ from the checkpoint if one is configured.
inline ModelWeights<Matrix> bench_weights(const BenchConfig& cfg) { return init_model_weights(cfg.model); }

inline CivicParams<Matrix> bench_params(const BenchConfig& cfg, const ModelWeights<Matrix>& theta) {
  auto phi = init_civic_params(cfg.model, theta);
  if (!cfg.phi_checkpoint.empty()) restore(load_tensors(cfg.phi_checkpoint), phi);
  return phi;
}

/// One image-like input from the synthetic domain, disjoint from the
/// distillation train and held-out draws.
inline distill::DistillSample bench_sample(const BenchConfig& cfg) {
  return distill::gen_synthetic(cfg.distill.data_seed ^ 0x2545f4914f6cdd1dULL, 1, cfg.model).front();
}

namespace detail {

template <class T>
struct Fixture {
  ModelWeights<num::Tensor<T>> theta;
  CivicParams<num::Tensor<T>> phi;
  VisualInput<T> input;
  std::vector<TokenId> prompt;
};

template <class T>
Fixture<T> make_fixture(const BenchConfig& cfg, const CivicParams<Matrix>* phi_override = nullptr) {
  const auto theta = bench_weights(cfg);
  const auto phi = phi_override != nullptr ? *phi_override : bench_params(cfg, theta);
  auto sample = bench_sample(cfg);
  return {convert_weights<T>(theta), convert_params<T>(phi),
          {num::cast<T>(sample.input.patches), sample.input.grid_h, sample.input.grid_w}, std::move(sample.prompt)};
}

struct Outcome {
  RunReport report;
  std::vector<TokenId> tokens;
  baselines::RoutingOpLog log;
};

template <class T>
Outcome run_once(const std::string& model, const Fixture<T>& fx, const BenchConfig& cfg, std::size_t steps) {
  num::MacCounter macs;
  RunOptions opts;
  opts.steps = steps;
  opts.macs = &macs;
  if (model == kDense) {
    auto r = run_dense(fx.input, fx.prompt, fx.theta, cfg.model, opts);
    return {std::move(r.report), std::move(r.tokens), {}};
  }
  if (model == kCivic) {
    auto r = civic::run_compact(fx.input, fx.prompt, fx.theta, fx.phi, cfg.model, {opts, cfg.apply_floor});
    return {std::move(r.report), std::move(r.tokens), {}};
  }
  auto r = baselines::run_posthoc(fx.input, fx.prompt, fx.theta, cfg.model, cfg.posthoc_for(model), opts);
  return {std::move(r.report), std::move(r.tokens), std::move(r.log)};
}

template <class F>
Summary summarize_field(const std::vector<RunReport>& runs, F&& f) {
  std::vector<double> xs;
  xs.reserve(runs.size());
  for (const auto& r : runs) xs.push_back(f(r));
  return summarize(std::move(xs));
}

inline void require_same(bool same, const std::string& model, const char* field) {
  if (!same) throw std::logic_error(model + ": " + field + " differs between runs");
}

inline PipelineSummary summarize_runs(const std::string& model, std::vector<Outcome> outs, const BenchConfig& cfg) {
  PipelineSummary s;
  s.model = model;
  const auto& first = outs.front();
  for (const auto& o : outs) {
    require_same(o.report.prefill_tokens == first.report.prefill_tokens, model, "prefill_tokens");
    require_same(o.report.visual_tokens_kept == first.report.visual_tokens_kept, model, "visual_tokens_kept");
    require_same(o.report.kv_cache_bytes == first.report.kv_cache_bytes, model, "kv_cache_bytes");
    require_same(o.report.kv_cache_peak_bytes == first.report.kv_cache_peak_bytes, model, "kv_cache_peak_bytes");
    require_same(o.report.mac_counts == first.report.mac_counts, model, "mac_counts");
    require_same(o.tokens == first.tokens, model, "generated tokens");
  }
  s.prefill_tokens = first.report.prefill_tokens;
  s.visual_tokens_kept = first.report.visual_tokens_kept;
  s.kv_cache_bytes = first.report.kv_cache_bytes;
  s.kv_cache_peak_bytes = first.report.kv_cache_peak_bytes;
  s.mac_counts = first.report.mac_counts;
  s.tokens = first.tokens;

  for (auto& o : outs) {
    s.runs.push_back(o.report);
    if (model != kDense && model != kCivic) s.logs.push_back(std::move(o.log));
  }
  s.total_ms = summarize_field(s.runs, [](const RunReport& r) { return r.total_ms; });
  s.vision_enc_ms = summarize_field(s.runs, [](const RunReport& r) { return r.vision_enc_ms; });
  s.proj_ms = summarize_field(s.runs, [](const RunReport& r) { return r.proj_ms; });
  s.prefill_ms = summarize_field(s.runs, [](const RunReport& r) { return r.prefill_ms; });
  s.decode_ms = summarize_field(s.runs, [](const RunReport& r) { return r.decode_ms; });
  s.overhead_ms = summarize_field(s.runs, [](const RunReport& r) { return r.overhead_ms; });
  s.residual_ms = summarize_field(s.runs, [](const RunReport& r) { return r.residual_ms(); });

  if (!s.logs.empty()) {
    const auto& entries = s.logs.front().entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
      std::vector<double> ms;
      for (const auto& log : s.logs) ms.push_back(log.entries().at(e).ms);
      s.routing.push_back({baselines::to_string(entries[e].op), entries[e].elements, summarize(std::move(ms))});
    }
  }

  const auto dense = cost::dense_cost(cfg.model, cfg.cost, cfg.steps);
  if (model == kDense) s.modeled = dense;
  else if (model == kCivic) s.modeled = cost::compact_cost(cfg.model, cfg.cost, cfg.steps);
  else {
    s.modeled = dense;
    s.modeled.route = s.overhead_ms.median;
  }
  return s;
}

template <class T>
SuiteResult run_suite_t(const BenchConfig& cfg, std::ostream* progress) {
  const auto fx = make_fixture<T>(cfg);
  SuiteResult result;
  result.cfg = cfg;
  const auto dense_modeled = cost::dense_cost(cfg.model, cfg.cost, cfg.steps);
  const auto& models = cfg.pipelines;
  if (progress != nullptr)
    *progress << "  " << cfg.warmup << " warmup + " << cfg.runs << " timed rounds over " << models.size()
              << " pipelines\n";
  // Round-robin: slow drift in machine speed lands on every pipeline alike
  // instead of on whichever ran last.
  for (std::size_t i = 0; i < cfg.warmup; ++i)
    for (const auto& model : models) run_once(model, fx, cfg, cfg.steps);
  std::vector<std::vector<Outcome>> outs(models.size());
  for (std::size_t i = 0; i < cfg.runs; ++i)
    for (std::size_t m = 0; m < models.size(); ++m) outs[m].push_back(run_once(models[m], fx, cfg, cfg.steps));
  for (std::size_t m = 0; m < models.size(); ++m) {
    const auto& model = models[m];
    for (std::size_t i = 0; i < outs[m].size() && model != kDense && model != kCivic; ++i) {
      result.cost_checks.push_back({model, i, cost::posthoc_cost(dense_modeled, outs[m][i].log).total(),
                                    dense_modeled.total() + outs[m][i].log.total()});
    }
    result.pipelines.push_back(summarize_runs(model, std::move(outs[m]), cfg));
  }
  return result;
}

}  // namespace detail

/// Every configured pipeline gets W discarded warmups and R timed runs,
/// interleaved round-robin on the calling thread.
inline SuiteResult run_suite(const BenchConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  retain_allocator_memory();
  return cfg.precision == Precision::f32 ? detail::run_suite_t<float>(cfg, progress)
                                         : detail::run_suite_t<double>(cfg, progress);
}

// ---------------------------------------------------------------------------
// Ratio verification

struct LawCheck {
  std::string name;
  std::string expected;
  std::string measured;
  bool pass = false;
};

struct VerifyReport {
  std::vector<LawCheck> laws;

  bool ok() const {
    for (const auto& l : laws)
      if (!l.pass) return false;
    return true;
  }
};

inline std::ostream& operator<<(std::ostream& os, const VerifyReport& v) {
  for (const auto& l : v.laws)
    os << (l.pass ? "PASS " : "FAIL ") << l.name << ": expected " << l.expected << ", measured " << l.measured << '\n';
  return os;
}

/// Runs dense and civic once with MAC counters and checks the interaction
/// and length laws exactly (integer cross-multiplication). The compact run
/// keeps every anchor so the laws are evaluated at M_e. `phi_override`
/// replaces the configured φ, which lets tests feed a mis-shaped one.
inline VerifyReport verify_ratios(const BenchConfig& cfg, const CivicParams<Matrix>* phi_override = nullptr) {
  cfg.model.validate();
  const auto& m = cfg.model;
  const auto fx = detail::make_fixture<double>(cfg, phi_override);
  BenchConfig all_kept = cfg;
  all_kept.apply_floor = false;
  const auto dense = detail::run_once(kDense, fx, all_kept, 0).report;
  const auto compact = detail::run_once(kCivic, fx, all_kept, 0).report;

  VerifyReport v;
  auto fmt = detail::fmt_double;
  {
    const std::uint64_t d = dense.mac_counts.at(kVisualLabels.scores);
    const std::uint64_t c = compact.mac_counts.at(kCompactLabels.scores);
    const std::uint64_t te = m.dense_tokens;
    const bool pass = c * te * te == d * m.compact_tokens * m.kv_anchors;
    v.laws.push_back({"attention interaction ratio",
                      "M_e*S/T_e^2 = " + std::to_string(m.compact_tokens) + "*" + std::to_string(m.kv_anchors) + "/" +
                          std::to_string(te) + "^2 = " + fmt(cost::attention_ratio(m)),
                      std::to_string(c) + "/" + std::to_string(d) + " = " +
                          fmt(static_cast<double>(c) / static_cast<double>(d)),
                      pass});
  }
  {
    const std::size_t dl = m.text_len + m.prefill_visual_tokens(), cl = m.text_len + m.compact_prefill_tokens();
    const bool pass = compact.kv_cache_bytes * dl == dense.kv_cache_bytes * cl;
    v.laws.push_back({"kv cache byte ratio",
                      "(L+M_p)/(L+T_p) = " + std::to_string(cl) + "/" + std::to_string(dl) + " = " +
                          fmt(cost::cache_ratio(m)),
                      std::to_string(compact.kv_cache_bytes) + "/" + std::to_string(dense.kv_cache_bytes) + " = " +
                          fmt(static_cast<double>(compact.kv_cache_bytes) / static_cast<double>(dense.kv_cache_bytes)),
                      pass});
  }
  {
    const std::size_t expected = m.text_len + m.compact_prefill_tokens();
    v.laws.push_back({"compact prefill length", "L+M_p = " + std::to_string(expected),
                      std::to_string(compact.prefill_tokens), compact.prefill_tokens == expected});
  }
  return v;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { compact_tokens, min_keep_ratio, kv_anchors };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::compact_tokens: return "compact_tokens";
    case SweepAxis::min_keep_ratio: return "min_keep_ratio";
    case SweepAxis::kv_anchors: return "kv_anchors";
  }
  return "unknown";
}

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "C" || s == "M_e" || s == "compact_tokens") return SweepAxis::compact_tokens;
  if (s == "rho_min" || s == "min_keep_ratio") return SweepAxis::min_keep_ratio;
  if (s == "S" || s == "kv_anchors") return SweepAxis::kv_anchors;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected C, rho_min or S)");
}

struct SweepPoint {
  double value = 0;
  SuiteResult suite;
};

struct SweepSkip {
  double value = 0;
  std::string reason;
};

struct SweepResult {
  SweepAxis axis = SweepAxis::compact_tokens;
  std::vector<SweepPoint> points;
  std::vector<SweepSkip> skipped;
};

inline void set_axis(BenchConfig& cfg, SweepAxis axis, double value) {
  auto as_count = [&] {
    if (!(value >= 1) || value != std::floor(value)) throw ConfigError("value must be a positive integer");
    return static_cast<std::size_t>(value);
  };
  switch (axis) {
    case SweepAxis::compact_tokens: cfg.model.compact_tokens = as_count(); break;
    case SweepAxis::min_keep_ratio: cfg.model.min_keep_ratio = value; break;
    case SweepAxis::kv_anchors: cfg.model.kv_anchors = as_count(); break;
  }
}

/// One suite per value. Values that break a config invariant are skipped;
/// the reason is recorded and, if `warn` is set, printed.
inline SweepResult sweep(const BenchConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                         std::ostream* warn = nullptr, std::ostream* progress = nullptr) {
  SweepResult out;
  out.axis = axis;
  for (double v : values) {
    BenchConfig c = cfg;
    try {
      set_axis(c, axis, v);
      c.validate();
    } catch (const ConfigError& e) {
      out.skipped.push_back({v, e.what()});
      if (warn != nullptr) *warn << "warning: skipping " << to_string(axis) << "=" << v << ": " << e.what() << '\n';
      continue;
    }
    if (progress != nullptr) *progress << to_string(axis) << " = " << v << '\n';
    out.points.push_back({v, run_suite(c, progress)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coefficient fit

/// A measured median latency paired with the pipeline's unit-coefficient
/// cost terms.
struct FitSample {
  cost::CostBreakdown units;  // evaluated with α = β = γ = 1
  double measured_ms = 0;
};

inline FitSample fit_sample(const PipelineSummary& p, const BenchConfig& cfg) {
  const cost::CostCoefficients one{};
  cost::CostBreakdown u = p.model == kCivic ? cost::compact_cost(cfg.model, one, cfg.steps)
                                            : cost::dense_cost(cfg.model, one, cfg.steps);
  return {u, p.total_ms.median - p.overhead_ms.median};
}

/// Least-squares α, β, γ (ms per unit) from measured totals. Each sample
/// contributes α·attention + β·(prefill + decode) + γ·kv ≈ measured.
/// Throws if the design matrix is rank deficient.
inline cost::CostCoefficients fit_coefficients(const std::vector<FitSample>& samples) {
  double ata[3][3] = {}, atb[3] = {};
  for (const auto& s : samples) {
    const double row[3] = {s.units.visual_attention, s.units.llm_prefill + s.units.decode, s.units.kv_cache};
    for (int i = 0; i < 3; ++i) {
      atb[i] += row[i] * s.measured_ms;
      for (int j = 0; j < 3; ++j) ata[i][j] += row[i] * row[j];
    }
  }
  // Column scaling keeps the normal equations well conditioned; the raw
  // terms span many orders of magnitude.
  double sc[3];
  for (int i = 0; i < 3; ++i) sc[i] = ata[i][i] > 0 ? 1.0 / std::sqrt(ata[i][i]) : 1.0;
  double m[3][4];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = ata[i][j] * sc[i] * sc[j];
    m[i][3] = atb[i] * sc[i];
  }
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    if (std::abs(m[piv][c]) < 1e-10) throw std::invalid_argument("fit_coefficients: samples do not determine all three coefficients");
    std::swap(m[c], m[piv]);
    for (int r = 0; r < 3; ++r) {
      if (r == c) continue;
      const double f = m[r][c] / m[c][c];
      for (int k = c; k < 4; ++k) m[r][k] -= f * m[c][k];
    }
  }
  return {m[0][3] / m[0][0] * sc[0], m[1][3] / m[1][1] * sc[1], m[2][3] / m[2][2] * sc[2]};
}

}  // namespace cvlm::bench
