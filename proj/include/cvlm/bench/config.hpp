#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cvlm/baselines/posthoc.hpp"
#include "cvlm/costmodel/cost.hpp"
#include "cvlm/distill/train.hpp"
#include "cvlm/model/config.hpp"

// Flat configuration files.
//
//   file    := { line '\n' }
//   line    := blank | comment | key '=' value [comment]
//   comment := '#' anything
//   key     := [a-z0-9_.]+
//
// Whitespace around keys and values is ignored. Every key may appear at most
// once per file. Command-line overrides use the same `key=value` form and are
// applied after the file. Unknown keys and malformed values are errors that
// name the source, the line and the field.

namespace cvlm::bench {

enum class Precision { f32, f64 };

inline const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline constexpr const char* kDense = "dense";
inline constexpr const char* kCivic = "civic";
inline constexpr const char* kPostHocRestore = "posthoc_restore";
inline constexpr const char* kPostHocPropagate = "posthoc_propagate";

inline bool known_pipeline(std::string_view name) {
  return name == kDense || name == kCivic || name == kPostHocRestore || name == kPostHocPropagate;
}

struct BenchConfig {
  PipelineConfig model;
  std::vector<std::string> pipelines{kDense, kCivic};
  std::size_t steps = 16;  // decode steps per run
  std::size_t warmup = 3;  // W
  std::size_t runs = 20;   // R
  Precision precision = Precision::f32;
  bool apply_floor = true;
  baselines::PostHocConfig posthoc;
  std::optional<std::size_t> prune_layer;  // defaults to the last encoder block
  cost::CostCoefficients cost;
  std::optional<double> omega_max;
  std::string phi_checkpoint;  // empty: seeded initialization
  distill::TrainOptions distill;

  baselines::PostHocConfig posthoc_for(const std::string& pipeline) const {
    auto p = posthoc;
    p.prune_layer = prune_layer.value_or(model.visual_layers - 1);
    p.mode = pipeline == kPostHocPropagate ? baselines::PostHocMode::propagate : baselines::PostHocMode::dense_restore;
    return p;
  }

  bool has(std::string_view pipeline) const {
    return std::find(pipelines.begin(), pipelines.end(), pipeline) != pipelines.end();
  }

  void validate() const {
    model.validate();
    if (runs < 1) throw ConfigError("invalid config: runs must be at least 1");
    if (pipelines.empty()) throw ConfigError("invalid config: no pipelines selected");
    std::set<std::string> seen;
    for (const auto& p : pipelines) {
      if (!known_pipeline(p)) throw ConfigError("invalid config: unknown pipeline '" + p + "'");
      if (!seen.insert(p).second) throw ConfigError("invalid config: pipeline '" + p + "' listed twice");
      if (p == kPostHocRestore || p == kPostHocPropagate) posthoc_for(p).validate(model);
    }
    if (model.dense_sequence_len() + steps > model.max_positions)
      throw ConfigError("invalid config: max_positions too small for " + std::to_string(steps) + " decode steps");
    cost.validate();
    if (has(kCivic)) cost::require_budget(cost::compact_cost(model, cost, steps), omega_max);
  }
};

class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(const std::string& source, std::size_t line, const std::string& field, const std::string& what)
      : ConfigError(source + ":" + std::to_string(line) + ": " + (field.empty() ? "" : "field '" + field + "': ") + what),
        line_(line),
        field_(field) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Whole-string numeric parses; empty strings and trailing junk are errors.
template <class N>
N parse_number(std::string_view v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end || v.empty()) throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
  return out;
}

inline bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true/false, got '" + std::string(v) + "'");
}

// Shortest text that reads back to the same double.
inline std::string fmt_double(double d) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, res.ptr);
}

struct Field {
  std::string key;
  std::function<void(BenchConfig&, std::string_view)> set;
  std::function<std::string(const BenchConfig&)> get;
};

// `member` is a generic accessor usable on const and mutable configs.
template <class M>
Field size_field(std::string key, M member) {
  return {std::move(key),
          [member](BenchConfig& c, std::string_view v) { member(c) = parse_number<std::size_t>(v); },
          [member](const BenchConfig& c) { return std::to_string(member(c)); }};
}

template <class M>
Field double_field(std::string key, M member) {
  return {std::move(key), [member](BenchConfig& c, std::string_view v) { member(c) = parse_number<double>(v); },
          [member](const BenchConfig& c) { return fmt_double(member(c)); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
#define CVLM_SIZE(name) f.push_back(size_field(#name, [](auto& c) -> auto& { return c.model.name; }))
#define CVLM_DOUBLE(name) f.push_back(double_field(#name, [](auto& c) -> auto& { return c.model.name; }))
    CVLM_SIZE(dense_tokens);
    CVLM_SIZE(grid_h);
    CVLM_SIZE(grid_w);
    CVLM_SIZE(visual_dim);
    CVLM_SIZE(visual_layers);
    CVLM_SIZE(visual_heads);
    CVLM_SIZE(merge_factor);
    CVLM_SIZE(lm_dim);
    CVLM_SIZE(lm_layers);
    CVLM_SIZE(lm_heads);
    CVLM_SIZE(text_len);
    CVLM_SIZE(text_prefix);
    CVLM_SIZE(vocab);
    CVLM_SIZE(max_positions);
    CVLM_SIZE(compact_tokens);
    CVLM_SIZE(kv_anchors);
    CVLM_DOUBLE(tau);
    CVLM_DOUBLE(min_keep_ratio);
    CVLM_DOUBLE(coverage);
    CVLM_DOUBLE(kl_temperature);
    CVLM_DOUBLE(kl_weight);
#undef CVLM_SIZE
#undef CVLM_DOUBLE
    f.push_back({"seed", [](BenchConfig& c, std::string_view v) { c.model.seed = parse_number<std::uint64_t>(v); },
                 [](const BenchConfig& c) { return std::to_string(c.model.seed); }});

    f.push_back({"pipelines",
                 [](BenchConfig& c, std::string_view v) {
                   c.pipelines.clear();
                   std::size_t pos = 0;
                   while (pos <= v.size()) {
                     const auto comma = v.find(',', pos);
                     const auto item = trim(v.substr(pos, comma == std::string_view::npos ? v.npos : comma - pos));
                     if (!known_pipeline(item)) throw std::invalid_argument("unknown pipeline '" + std::string(item) + "'");
                     c.pipelines.emplace_back(item);
                     if (comma == std::string_view::npos) break;
                     pos = comma + 1;
                   }
                 },
                 [](const BenchConfig& c) {
                   std::string s;
                   for (const auto& p : c.pipelines) s += (s.empty() ? "" : ",") + p;
                   return s;
                 }});
    f.push_back(size_field("steps", [](auto& c) -> auto& { return c.steps; }));
    f.push_back(size_field("warmup", [](auto& c) -> auto& { return c.warmup; }));
    f.push_back(size_field("runs", [](auto& c) -> auto& { return c.runs; }));
    f.push_back({"precision",
                 [](BenchConfig& c, std::string_view v) {
                   if (v == "f32") c.precision = Precision::f32;
                   else if (v == "f64") c.precision = Precision::f64;
                   else throw std::invalid_argument("expected f32 or f64, got '" + std::string(v) + "'");
                 },
                 [](const BenchConfig& c) { return std::string(to_string(c.precision)); }});
    f.push_back({"apply_floor", [](BenchConfig& c, std::string_view v) { c.apply_floor = parse_bool(v); },
                 [](const BenchConfig& c) { return std::string(c.apply_floor ? "true" : "false"); }});

    f.push_back(double_field("posthoc.keep_ratio", [](auto& c) -> auto& { return c.posthoc.keep_ratio; }));
    f.push_back({"posthoc.prune_layer",
                 [](BenchConfig& c, std::string_view v) { c.prune_layer = parse_number<std::size_t>(v); },
                 [](const BenchConfig& c) {
                   return std::to_string(c.prune_layer.value_or(c.model.visual_layers - 1));
                 }});
    f.push_back({"posthoc.scoring",
                 [](BenchConfig& c, std::string_view v) {
                   if (v == "norm") c.posthoc.scoring = baselines::Scoring::norm;
                   else if (v == "attn_mass") c.posthoc.scoring = baselines::Scoring::attn_mass;
                   else throw std::invalid_argument("expected norm or attn_mass, got '" + std::string(v) + "'");
                 },
                 [](const BenchConfig& c) {
                   return std::string(c.posthoc.scoring == baselines::Scoring::norm ? "norm" : "attn_mass");
                 }});

    f.push_back(double_field("cost.alpha", [](auto& c) -> auto& { return c.cost.alpha; }));
    f.push_back(double_field("cost.beta", [](auto& c) -> auto& { return c.cost.beta; }));
    f.push_back(double_field("cost.gamma", [](auto& c) -> auto& { return c.cost.gamma; }));
    f.push_back({"omega_max",
                 [](BenchConfig& c, std::string_view v) {
                   if (v == "none") c.omega_max.reset();
                   else c.omega_max = parse_number<double>(v);
                 },
                 [](const BenchConfig& c) { return c.omega_max ? fmt_double(*c.omega_max) : std::string("none"); }});
    f.push_back({"phi_checkpoint", [](BenchConfig& c, std::string_view v) { c.phi_checkpoint = std::string(v); },
                 [](const BenchConfig& c) { return c.phi_checkpoint; }});

    f.push_back(size_field("distill.steps", [](auto& c) -> auto& { return c.distill.steps; }));
    f.push_back(double_field("distill.lr", [](auto& c) -> auto& { return c.distill.adam.lr; }));
    f.push_back(
        size_field("distill.train_samples", [](auto& c) -> auto& { return c.distill.train_samples; }));
    f.push_back(
        size_field("distill.heldout_samples", [](auto& c) -> auto& { return c.distill.heldout_samples; }));
    f.push_back({"distill.data_seed",
                 [](BenchConfig& c, std::string_view v) { c.distill.data_seed = parse_number<std::uint64_t>(v); },
                 [](const BenchConfig& c) { return std::to_string(c.distill.data_seed); }});
    return f;
  }();
  return table;
}

inline const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace detail

/// Applies one `key=value` assignment. `line` is reported in errors.
inline void apply_assignment(BenchConfig& cfg, std::string_view text, const std::string& source, std::size_t line) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigParseError(source, line, "", "expected key = value");
  const auto key = detail::trim(text.substr(0, eq));
  const auto value = detail::trim(text.substr(eq + 1));
  if (key.empty()) throw ConfigParseError(source, line, "", "missing key before '='");
  const auto* field = detail::find_field(key);
  if (field == nullptr) throw ConfigParseError(source, line, std::string(key), "unknown key");
  try {
    field->set(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigParseError(source, line, std::string(key), e.what());
  }
}

/// Parses a whole config text on top of `base`. Does not validate.
inline BenchConfig parse_config(std::string_view text, const std::string& source = "<config>",
                                BenchConfig base = {}) {
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (!line.empty()) {
      const auto key = std::string(detail::trim(line.substr(0, line.find('='))));
      if (!key.empty() && !seen.insert(key).second) throw ConfigParseError(source, line_no, key, "duplicate key");
      apply_assignment(base, line, source, line_no);
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return base;
}

inline BenchConfig load_config(const std::string& path, BenchConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path, std::move(base));
}

/// Command-line overrides; the n-th override is reported as line n.
inline void apply_overrides(BenchConfig& cfg, const std::vector<std::string>& overrides) {
  for (std::size_t i = 0; i < overrides.size(); ++i) apply_assignment(cfg, overrides[i], "override", i + 1);
}

/// Every key with its current value, in table order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const BenchConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : detail::fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

/// Serializes in the file grammar; parse_config(dump_config(c)) reproduces c.
inline std::string dump_config(const BenchConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_entries(cfg)) s += k + " = " + v + "\n";
  return s;
}

}  // namespace cvlm::bench
