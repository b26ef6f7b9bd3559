#pragma once

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cvlm/bench/suite.hpp"

// Machine output. CSV rows carry medians; JSON carries medians, quartiles,
// counters and the full config. KV sizes are bytes everywhere except the
// human summary, which uses MB = 2^20 bytes.

namespace cvlm::bench {

inline constexpr const char* kReportCsvHeader =
    "model,total_ms,vision_enc_ms,proj_ms,prefill_ms,decode_ms,llm_total_ms,overhead_ms,prefill_tokens,kv_cache_bytes";

namespace detail {

inline std::string ms3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string csv_row(const PipelineSummary& p) {
  std::ostringstream os;
  os << p.model << ',' << ms3(p.total_ms.median) << ',' << ms3(p.vision_enc_ms.median) << ','
     << ms3(p.proj_ms.median) << ',' << ms3(p.prefill_ms.median) << ',' << ms3(p.decode_ms.median) << ','
     << ms3(p.llm_total_ms()) << ',' << ms3(p.overhead_ms.median) << ',' << p.prefill_tokens << ','
     << p.kv_cache_bytes;
  return os.str();
}

inline nlohmann::json summary_json(const Summary& s) {
  return {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"iqr", s.iqr()}, {"min", s.min}, {"max", s.max}};
}

inline nlohmann::json cost_json(const cost::CostBreakdown& c) {
  return {{"visual_attention", c.visual_attention}, {"llm_prefill", c.llm_prefill}, {"kv_cache", c.kv_cache},
          {"decode", c.decode}, {"route", c.route}, {"total", c.total()}};
}

}  // namespace detail

inline void write_report_csv(std::ostream& os, const SuiteResult& r) {
  os << kReportCsvHeader << '\n';
  for (const auto& p : r.pipelines) os << detail::csv_row(p) << '\n';
}

/// Raw per-run timings, one row per (pipeline, run).
inline void write_runs_csv(std::ostream& os, const SuiteResult& r) {
  os << "model,run,total_ms,vision_enc_ms,proj_ms,prefill_ms,decode_ms,llm_total_ms,overhead_ms,residual_ms\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& p : r.pipelines)
    for (std::size_t i = 0; i < p.runs.size(); ++i) {
      const auto& x = p.runs[i];
      os << p.model << ',' << i << ',' << x.total_ms << ',' << x.vision_enc_ms << ',' << x.proj_ms << ','
         << x.prefill_ms << ',' << x.decode_ms << ',' << x.llm_total_ms() << ',' << x.overhead_ms << ','
         << x.residual_ms() << '\n';
    }
  os << std::defaultfloat;
}

inline nlohmann::json pipeline_json(const PipelineSummary& p) {
  using nlohmann::json;
  json routing = json::array();
  for (const auto& r : p.routing) routing.push_back({{"op", r.op}, {"elements", r.elements}, {"ms", detail::summary_json(r.ms)}});
  json macs = json::object();
  for (const auto& [k, v] : p.mac_counts) macs[k] = v;
  return {{"model", p.model},
          {"timing_ms",
           {{"total", detail::summary_json(p.total_ms)},
            {"vision_enc", detail::summary_json(p.vision_enc_ms)},
            {"proj", detail::summary_json(p.proj_ms)},
            {"prefill", detail::summary_json(p.prefill_ms)},
            {"decode", detail::summary_json(p.decode_ms)},
            {"overhead", detail::summary_json(p.overhead_ms)},
            {"residual", detail::summary_json(p.residual_ms)},
            {"llm_total_median", p.llm_total_ms()}}},
          {"prefill_tokens", p.prefill_tokens},
          {"visual_tokens_kept", p.visual_tokens_kept},
          {"kv_cache_bytes", p.kv_cache_bytes},
          {"kv_cache_peak_bytes", p.kv_cache_peak_bytes},
          {"mac_counts", macs},
          {"generated_tokens", p.tokens},
          {"routing", routing},
          {"modeled_cost", detail::cost_json(p.modeled)}};
}

inline nlohmann::json report_json(const SuiteResult& r) {
  using nlohmann::json;
  json config = json::object();
  for (const auto& [k, v] : config_entries(r.cfg)) config[k] = v;
  json pipelines = json::array();
  for (const auto& p : r.pipelines) pipelines.push_back(pipeline_json(p));

  json ratios = {{"attention_interaction", cost::attention_ratio(r.cfg.model)},
                 {"kv_cache_law", cost::cache_ratio(r.cfg.model)},
                 {"prefill_law", cost::prefill_ratio(r.cfg.model)}};
  if (const auto *d = r.find(kDense), *c = r.find(kCivic); d != nullptr && c != nullptr) {
    ratios["civic_over_dense_total"] = c->total_ms.median / d->total_ms.median;
    ratios["civic_over_dense_kv_bytes"] = static_cast<double>(c->kv_cache_bytes) / static_cast<double>(d->kv_cache_bytes);
  }

  double max_err = 0;
  bool all_ok = true;
  for (const auto& c : r.cost_checks) {
    max_err = std::max(max_err, c.error());
    all_ok = all_ok && c.ok();
  }
  const auto dense_cost = cost::dense_cost(r.cfg.model, r.cfg.cost, r.cfg.steps).total();
  const auto compact_cost = cost::compact_cost(r.cfg.model, r.cfg.cost, r.cfg.steps).total();
  json checks = {{"posthoc_runs_checked", r.cost_checks.size()},
                 {"posthoc_max_abs_error", max_err},
                 {"posthoc_identity_holds", all_ok},
                 {"compact_below_dense", compact_cost < dense_cost}};

  return {{"config", config}, {"pipelines", pipelines}, {"ratios", ratios}, {"cost_checks", checks}};
}

/// Type skeleton of a JSON document: leaves become their type name, object
/// keys are kept, and an array collapses to one element when all of its
/// elements share a skeleton.
inline nlohmann::json json_structure(const nlohmann::json& j) {
  using nlohmann::json;
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = json_structure(it.value());
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& e : j) out.push_back(json_structure(e));
    bool uniform = !out.empty();
    for (const auto& e : out) uniform = uniform && e == out.front();
    if (uniform) return json::array({out.front()});
    return out;
  }
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  return "null";
}

/// Human-readable table with KV sizes in MB.
inline void print_summary(std::ostream& os, const SuiteResult& r) {
  os << std::left << std::setw(18) << "model" << std::right << std::setw(11) << "total" << std::setw(11) << "vision"
     << std::setw(9) << "proj" << std::setw(11) << "prefill" << std::setw(11) << "decode" << std::setw(10) << "overhead"
     << std::setw(9) << "tokens" << std::setw(10) << "kv MB" << '\n';
  for (const auto& p : r.pipelines) {
    os << std::left << std::setw(18) << p.model << std::right << std::fixed << std::setprecision(3) << std::setw(11)
       << p.total_ms.median << std::setw(11) << p.vision_enc_ms.median << std::setw(9) << p.proj_ms.median
       << std::setw(11) << p.prefill_ms.median << std::setw(11) << p.decode_ms.median << std::setw(10)
       << p.overhead_ms.median << std::setw(9) << p.prefill_tokens << std::setw(10)
       << static_cast<double>(p.kv_cache_bytes) / (1 << 20) << '\n';
  }
  os << std::defaultfloat;
}

// ---------------------------------------------------------------------------
// Sweep output

inline constexpr const char* kSweepCsvHeader =
    "axis,value,model,total_ms,vision_enc_ms,proj_ms,prefill_ms,decode_ms,llm_total_ms,overhead_ms,prefill_tokens,"
    "kv_cache_bytes,visual_tokens_kept,modeled_cost";

inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
  os << kSweepCsvHeader << '\n';
  for (const auto& pt : s.points)
    for (const auto& p : pt.suite.pipelines)
      os << to_string(s.axis) << ',' << detail::fmt_double(pt.value) << ',' << detail::csv_row(p) << ','
         << p.visual_tokens_kept << ',' << detail::fmt_double(p.modeled.total()) << '\n';
}

inline nlohmann::json sweep_json(const SweepResult& s) {
  using nlohmann::json;
  json points = json::array();
  for (const auto& pt : s.points) points.push_back({{"value", pt.value}, {"report", report_json(pt.suite)}});
  json skipped = json::array();
  for (const auto& sk : s.skipped) skipped.push_back({{"value", sk.value}, {"reason", sk.reason}});
  return {{"axis", to_string(s.axis)}, {"points", points}, {"skipped", skipped}};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

}  // namespace cvlm::bench
