#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cvlm/numkit/tensor.hpp"

namespace cvlm {

/// Per-layer key/value buffers of shape current_len × D_l. All layers share
/// one length; a token is counted once every layer has appended it.
template <class T>
class KVCache {
 public:
  KVCache(std::size_t layers, std::size_t dim, std::size_t reserve_rows = 0)
      : dim_(dim), keys_(layers, num::Tensor<T>(0, dim)), values_(layers, num::Tensor<T>(0, dim)) {
    for (std::size_t l = 0; l < layers; ++l) {
      keys_[l].reserve_rows(reserve_rows);
      values_[l].reserve_rows(reserve_rows);
    }
  }

  void append(std::size_t layer, const num::Tensor<T>& k, const num::Tensor<T>& v) {
    if (k.cols() != dim_ || v.cols() != dim_ || k.rows() != v.rows()) {
      throw num::DimensionError("KVCache::append: expected n x " + std::to_string(dim_) + ", got " +
                                k.shape_str() + " / " + v.shape_str());
    }
    keys_[layer].append_rows(k);
    values_[layer].append_rows(v);
  }

  const num::Tensor<T>& keys(std::size_t layer) const { return keys_[layer]; }
  const num::Tensor<T>& values(std::size_t layer) const { return values_[layer]; }

  std::size_t layers() const { return keys_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t current_len() const { return keys_.empty() ? 0 : keys_.front().rows(); }

  /// 2 · N_l · len · D_l · sizeof(T).
  std::uint64_t bytes() const {
    return 2ULL * layers() * current_len() * dim_ * sizeof(T);
  }

  bool consistent() const {
    for (std::size_t l = 0; l < layers(); ++l)
      if (keys_[l].rows() != current_len() || values_[l].rows() != current_len()) return false;
    return true;
  }

 private:
  std::size_t dim_;
  std::vector<num::Tensor<T>> keys_;
  std::vector<num::Tensor<T>> values_;
};

}  // namespace cvlm
