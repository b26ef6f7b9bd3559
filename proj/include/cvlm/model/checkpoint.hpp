#pragma once

#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "cvlm/model/weights.hpp"

// Checkpoint schema (version 1), one JSON document:
//   {"format": "cvlm-tensors", "version": 1,
//    "tensors": [{"name": "model.encoder.0.wq", "shape": [rows, cols], "data": [row-major values]}, ...]}
// Dense weights use the "model." prefix, compact-pathway parameters "civic.".
// Both sets may share one file.

namespace cvlm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointFormat = "cvlm-tensors";
inline constexpr int kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Matrix>;

inline void collect(TensorMap& out, const ModelWeights<Matrix>& w) {
  zip_model(kModelPrefix, [&](const std::string& n, const Matrix& m) { out[n] = m; }, w);
}

inline void collect(TensorMap& out, const CivicParams<Matrix>& p) {
  zip_params(kCivicPrefix, [&](const std::string& n, const Matrix& m) { out[n] = m; }, p);
}

inline nlohmann::json to_json(const TensorMap& tensors) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    arr.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", m.storage()}});
  }
  return {{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"tensors", std::move(arr)}};
}

inline TensorMap from_json(const nlohmann::json& doc) {
  if (doc.value("format", "") != kCheckpointFormat) throw CheckpointError("checkpoint: unknown format");
  if (doc.value("version", 0) != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");
  TensorMap out;
  for (const auto& t : doc.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw CheckpointError("checkpoint: tensor " + name + " is not 2-D");
    auto data = t.at("data").get<std::vector<double>>();
    if (data.size() != shape[0] * shape[1]) {
      throw CheckpointError("checkpoint: tensor " + name + " has " + std::to_string(data.size()) +
                            " values for shape " + std::to_string(shape[0]) + "x" + std::to_string(shape[1]));
    }
    if (!out.emplace(name, Matrix(shape[0], shape[1], std::move(data))).second)
      throw CheckpointError("checkpoint: duplicate tensor " + name);
  }
  return out;
}

inline void save_tensors(const std::string& path, const TensorMap& tensors) {
  std::ofstream os(path);
  if (!os) throw CheckpointError("checkpoint: cannot write " + path);
  os << to_json(tensors).dump() << '\n';
}

inline TensorMap load_tensors(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("checkpoint: cannot read " + path);
  try {
    return from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint: " + path + ": " + e.what());
  }
}

namespace detail {

inline void fill_from(const TensorMap& src, const std::string& name, Matrix& dst) {
  auto it = src.find(name);
  if (it == src.end()) throw CheckpointError("checkpoint: missing tensor " + name);
  if (!it->second.same_shape(dst)) {
    throw CheckpointError("checkpoint: tensor " + name + " has shape " + it->second.shape_str() + ", expected " +
                          dst.shape_str());
  }
  dst = it->second;
}

}  // namespace detail

/// Overwrites every tensor of `w` from `src`; shapes must match the skeleton.
inline void restore(const TensorMap& src, ModelWeights<Matrix>& w) {
  zip_model(kModelPrefix, [&](const std::string& n, Matrix& m) { detail::fill_from(src, n, m); }, w);
}

inline void restore(const TensorMap& src, CivicParams<Matrix>& p) {
  zip_params(kCivicPrefix, [&](const std::string& n, Matrix& m) { detail::fill_from(src, n, m); }, p);
}

}  // namespace cvlm
