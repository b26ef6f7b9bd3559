#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cvlm/numkit/exp.hpp"
#include "cvlm/numkit/instrument.hpp"
#include "cvlm/numkit/reduce.hpp"

namespace cvlm::num {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Row-major dense matrix. Every matrix in the engine is one of these: patch
/// embeddings, weights, hidden states, attention scores, cached keys/values.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }
  Tensor(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged tensor literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  /// Appends the rows of `more` (same column count). Used by the KV cache.
  void append_rows(const Tensor& more) {
    if (more.cols_ != cols_ && rows_ != 0) {
      throw DimensionError("append_rows: column mismatch " + std::to_string(cols_) + " vs " +
                           std::to_string(more.cols_));
    }
    if (rows_ == 0) cols_ = more.cols_;
    data_.insert(data_.end(), more.data_.begin(), more.data_.end());
    rows_ += more.rows_;
  }
  void reserve_rows(std::size_t rows) { data_.reserve(rows * cols_); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Tensor& o) const = default;

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = Tensor<double>;

template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.size());
  std::transform(x.values().begin(), x.values().end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return Tensor<To>(x.rows(), x.cols(), std::move(out));
}

template <class T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.values().begin(), x.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  }
  return m;
}

namespace detail {

inline std::string shapes(const char* op, std::size_t ar, std::size_t ac, std::size_t br,
                          std::size_t bc) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << ar << "x" << ac << " and " << br << "x" << bc;
  return os.str();
}

template <class T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw DimensionError(shapes(op, a.rows(), a.cols(), b.rows(), b.cols()));
}

// dst (c×r) = srcᵀ for row-major src (r×c), in blocks. The inner loop
// writes dst rows contiguously; writing down dst columns instead hits 4K
// aliasing whenever r·sizeof(T) is a multiple of 4096.
template <class T>
void transpose_into(const T* src, T* dst, std::size_t r, std::size_t c) {
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < r; i0 += B)
    for (std::size_t j0 = 0; j0 < c; j0 += B) {
      const std::size_t i1 = std::min(r, i0 + B), j1 = std::min(c, j0 + B);
      for (std::size_t j = j0; j < j1; ++j)
        for (std::size_t i = i0; i < i1; ++i) dst[j * r + i] = src[i * c + j];
    }
}

// Register tile: R rows of out by W columns, accumulated over all of k
// before a single store. Every output element still accumulates its products
// in k order with fused multiply-adds, so the tile, the edge path and the
// single-row path agree bit for bit.
template <class T, std::size_t R, std::size_t W>
void gemm_tile(const T* a, const T* b, T* out, std::size_t n, std::size_t p) {
  T acc[R][W] = {};
  for (std::size_t k = 0; k < n; ++k) {
    const T* brow = b + k * p;
    for (std::size_t r = 0; r < R; ++r) {
      const T ark = a[r * n + k];
      for (std::size_t j = 0; j < W; ++j) acc[r][j] = std::fma(ark, brow[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < W; ++j) out[r * p + j] += acc[r][j];
}

// Ragged edges: plain i-k-j over a rows × width block.
template <class T>
void gemm_edge(const T* a, const T* b, T* out, std::size_t rows, std::size_t n, std::size_t p, std::size_t width) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const T aik = a[i * n + k];
      const T* brow = b + k * p;
      for (std::size_t j = 0; j < width; ++j) out[i * p + j] = std::fma(aik, brow[j], out[i * p + j]);
    }
}

// out (m×p) += a (m×n) · b (n×p), all row-major. Tile sizes were picked by
// measurement on AVX-512; 16-wide tiles vectorize badly with gcc.
template <class T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t n, std::size_t p) {
  constexpr std::size_t R = 8, W = 32;
  const std::size_t full_cols = p / W * W;
  std::size_t i = 0;
  for (; i + R <= m; i += R) {
    for (std::size_t j = 0; j < full_cols; j += W) gemm_tile<T, R, W>(a + i * n, b + j, out + i * p + j, n, p);
    if (full_cols < p) gemm_edge(a + i * n, b + full_cols, out + i * p + full_cols, R, n, p, p - full_cols);
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < full_cols; j += W) gemm_tile<T, 1, W>(a + i * n, b + j, out + i * p + j, n, p);
    if (full_cols < p) gemm_edge(a + i * n, b + full_cols, out + i * p + full_cols, 1, n, p, p - full_cols);
  }
}

}  // namespace detail

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  Tensor<T> out(x.cols(), x.rows());
  detail::transpose_into(x.values().data(), out.values().data(), x.rows(), x.cols());
  note_op(out.rows(), out.cols(), 0);
  return out;
}

/// a · b. Counts a.rows × a.cols × b.cols multiply-accumulates.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError(detail::shapes("matmul", a.rows(), a.cols(), b.rows(), b.cols()));
  }
  Tensor<T> out(a.rows(), b.cols());
  detail::gemm_nn(a.values().data(), b.values().data(), out.values().data(), a.rows(), a.cols(),
                  b.cols());
  note_op(out.rows(), out.cols(), static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols());
  return out;
}

/// a · bᵀ without materializing the transpose in the caller.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError(detail::shapes("matmul_nt", a.rows(), a.cols(), b.rows(), b.cols()));
  }
  Tensor<T> bt(b.cols(), b.rows());
  detail::transpose_into(b.values().data(), bt.values().data(), b.rows(), b.cols());
  Tensor<T> out(a.rows(), b.rows());
  detail::gemm_nn(a.values().data(), bt.values().data(), out.values().data(), a.rows(), a.cols(),
                  b.rows());
  note_op(out.rows(), out.cols(), static_cast<std::uint64_t>(a.rows()) * a.cols() * b.rows());
  return out;
}

/// aᵀ · b.
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError(detail::shapes("matmul_tn", a.rows(), a.cols(), b.rows(), b.cols()));
  }
  Tensor<T> out(a.cols(), b.cols());
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  for (std::size_t k = 0; k < n; ++k) {
    const T* arow = a.values().data() + k * m;
    const T* brow = b.values().data() + k * p;
    for (std::size_t i = 0; i < m; ++i) {
      const T aki = arow[i];
      T* orow = out.values().data() + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aki * brow[j];
    }
  }
  note_op(out.rows(), out.cols(), static_cast<std::uint64_t>(m) * n * p);
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("add", a, b);
  Tensor<T> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("sub", a, b);
  Tensor<T> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("hadamard", a, b);
  Tensor<T> out = a;
  auto o = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  note_op(out.rows(), out.cols(), 0);
  return out;
}

/// x + bias broadcast over rows; bias is 1 × cols.
template <class T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError(detail::shapes("add_row", x.rows(), x.cols(), bias.rows(), bias.cols()));
  }
  Tensor<T> out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias(0, j);
  }
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double s) {
  Tensor<T> out = x;
  for (auto& v : out.values()) v = static_cast<T>(v * s);
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
T sum_all(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return s;
}

namespace detail {

// Softmax over the first `valid` entries of a row; entries beyond are zeroed.
template <class T>
void softmax_span(std::span<const T> in, std::span<T> out, std::size_t valid) {
  const T mx = lane_max(in.first(valid));
  exp_shifted(in.first(valid), out.first(valid), mx);
  const T inv = T{1} / lane_sum<T>(out.first(valid));
  for (std::size_t j = 0; j < valid; ++j) out[j] *= inv;
  for (std::size_t j = valid; j < out.size(); ++j) out[j] = 0;
}

}  // namespace detail

/// Row-wise softmax, stabilized by subtracting the row maximum.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  if (x.cols() == 0) return out;
  for (std::size_t i = 0; i < x.rows(); ++i) detail::softmax_span(x.row(i), out.row(i), x.cols());
  note_op(out.rows(), out.cols(), 0);
  return out;
}

/// Causal softmax: row i may attend to columns j ≤ i + (cols − rows). Masked
/// entries are exactly zero. With rows == cols this is the usual lower triangle.
template <class T>
Tensor<T> causal_softmax_rows(const Tensor<T>& x) {
  if (x.cols() < x.rows()) {
    throw DimensionError("causal_softmax_rows: more queries than keys (" + x.shape_str() + ")");
  }
  Tensor<T> out(x.rows(), x.cols());
  const std::size_t offset = x.cols() - x.rows();
  for (std::size_t i = 0; i < x.rows(); ++i)
    detail::softmax_span(x.row(i), out.row(i), i + offset + 1);
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const T mx = lane_max(in);
    exp_shifted(in, o, mx);
    const T lse = mx + std::log(lane_sum<T>(o));
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = in[j] - lse;
  }
  note_op(out.rows(), out.cols(), 0);
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kL2Guard = 1e-12;
inline constexpr double kColumnGuard = 1e-12;

/// Layer normalization without affine parameters: population variance with
/// eps inside the square root.
template <class T>
Tensor<T> layernorm_rows(const Tensor<T>& x, double eps = kLayerNormEps) {
  if (x.cols() < 2) throw DimensionError("layernorm_rows: needs at least 2 columns, got " + x.shape_str());
  Tensor<T> out(x.rows(), x.cols());
  const T n = static_cast<T>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const T mean = lane_sum(in) / n;
    const T var = lane_sum_sq(in, mean) / n;
    const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = (in[j] - mean) * inv;
  }
  note_op(out.rows(), out.cols(), 0);
  return out;
}

/// Unit Euclidean norm per row; rows with norm ≤ guard are returned unchanged.
template <class T>
Tensor<T> l2norm_rows(const Tensor<T>& x, double guard = kL2Guard) {
  Tensor<T> out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = out.row(i);
    const T norm = std::sqrt(lane_sum_sq<T>(r));
    if (norm <= static_cast<T>(guard)) continue;
    for (auto& v : r) v /= norm;
  }
  note_op(out.rows(), out.cols(), 0);
  return out;
}

/// Euclidean norm of every row, as a column vector.
template <class T>
std::vector<T> row_norms(const Tensor<T>& x) {
  std::vector<T> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = std::sqrt(lane_sum_sq(x.row(i)));
  return out;
}

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
}  // namespace detail

/// tanh-approximated GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.values()) {
    const T u = static_cast<T>(detail::kGeluC) * (v + static_cast<T>(detail::kGeluA) * v * v * v);
    // 0.5·v·(1 + tanh u) written as v·sigmoid(2u)
    v = v / (T{1} + fast_exp(T{-2} * u));
  }
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.cols()) throw DimensionError("slice_cols out of range on " + x.shape_str());
  Tensor<T> out(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i)
    std::copy_n(x.row(i).begin() + begin, count, out.row(i).begin());
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) return {};
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) throw DimensionError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor<T> out(parts[0].rows(), cols);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto dst = out.row(i).begin();
    for (const auto& p : parts) dst = std::copy(p.row(i).begin(), p.row(i).end(), dst);
  }
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> idx) {
  Tensor<T> out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  }
  note_op(out.rows(), out.cols(), 0);
  return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) throw DimensionError("slice_rows out of range on " + x.shape_str());
  std::vector<T> data(x.values().begin() + begin * x.cols(),
                      x.values().begin() + (begin + count) * x.cols());
  note_op(count, x.cols(), 0);
  return Tensor<T>(count, x.cols(), std::move(data));
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    if (cols != 0 && p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
    cols = p.cols();
    rows += p.rows();
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  note_op(rows, cols, 0);
  return Tensor<T>(rows, cols, std::move(data));
}

/// Reinterprets the row-major buffer with a new shape. Grouping k
/// consecutive rows of width d into one row of width k·d is a reshape.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.size()) {
    throw DimensionError("reshape " + x.shape_str() + " to " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  note_op(rows, cols, 0);
  return Tensor<T>(rows, cols, x.storage());
}

/// Divides every column by its sum. Columns whose sum is below `guard` are
/// set to zero so they contribute nothing downstream.
template <class T>
Tensor<T> column_normalize(const Tensor<T>& x, double guard = kColumnGuard) {
  std::vector<T> sums(x.cols(), T{0});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) sums[j] += x(i, j);
  Tensor<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j)
      out(i, j) = sums[j] < static_cast<T>(guard) ? T{0} : x(i, j) / sums[j];
  note_op(out.rows(), out.cols(), 0);
  return out;
}

}  // namespace cvlm::num
