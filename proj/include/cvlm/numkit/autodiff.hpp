#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "cvlm/numkit/tensor.hpp"

namespace cvlm::num {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool tracked() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar with respect to tracked leaves. Leaves that the
/// scalar does not depend on have no entry.
class Gradients {
 public:
  bool has(const Var& leaf) const { return grads_.count(leaf.id()) != 0; }
  const Matrix& at(const Var& leaf) const { return grads_.at(leaf.id()); }
  const Matrix* find(const Var& leaf) const {
    auto it = grads_.find(leaf.id());
    return it == grads_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::map<std::size_t, Matrix> grads_;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
/// node index is already a topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Var leaf(Matrix value) { return push(std::move(value), true, true, nullptr); }
  Var constant(Matrix value) { return push(std::move(value), false, false, nullptr); }

  /// Records an op result. The node is tracked iff any parent is tracked.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    bool tracked = false;
    for (const auto& p : parents) tracked = tracked || nodes_[p.id()].tracked;
    return push(std::move(value), tracked, false, tracked ? std::move(backward) : nullptr);
  }
  Var record_many(Matrix value, std::span<const Var> parents, Backward backward) {
    bool tracked = false;
    for (const auto& p : parents) tracked = tracked || nodes_[p.id()].tracked;
    return push(std::move(value), tracked, false, tracked ? std::move(backward) : nullptr);
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient of node `id`; no-op for untracked nodes.
  void accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.tracked) return;
    if (n.grad.empty() && n.value.size() != 0) {
      n.grad = g;
      n.has_grad = true;
      return;
    }
    auto dst = n.grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    n.has_grad = true;
  }

  Gradients backward(const Var& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be 1x1, got " + lv.shape_str());
    }
    for (auto& n : nodes_) {
      n.grad = Matrix();
      n.has_grad = false;
    }
    Gradients out;
    if (!nodes_[loss.id()].tracked) return out;
    accumulate(loss.id(), Matrix(1, 1, 1.0));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.is_leaf) {
        out.grads_.emplace(i, n.grad);
        continue;
      }
      if (n.backward) {
        Matrix g = std::move(n.grad);
        n.grad = Matrix();
        n.backward(*this, g);
      }
    }
    return out;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool tracked = false;
    bool is_leaf = false;
    Backward backward;
  };

  Var push(Matrix value, bool tracked, bool is_leaf, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), false, tracked, is_leaf, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::tracked() const { return tape_->tracked(id_); }

// ---------------------------------------------------------------------------
// Differentiable ops. Names and semantics mirror the Tensor kernels so model
// code can be written once over either type.

inline Var matmul(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(matmul(a.value(), b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.tracked(ia)) t.accumulate(ia, matmul_nt(g, t.value(ib)));
    if (t.tracked(ib)) t.accumulate(ib, matmul_tn(t.value(ia), g));
  });
}

inline Var matmul_nt(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(matmul_nt(a.value(), b.value()), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            if (t.tracked(ia)) t.accumulate(ia, matmul(g, t.value(ib)));
                            if (t.tracked(ib)) t.accumulate(ib, matmul_tn(g, t.value(ia)));
                          });
}

inline Var matmul_tn(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(matmul_tn(a.value(), b.value()), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            if (t.tracked(ia)) t.accumulate(ia, matmul_nt(t.value(ib), g));
                            if (t.tracked(ib)) t.accumulate(ib, matmul(t.value(ia), g));
                          });
}

inline Var transpose(const Var& x) {
  const std::size_t ix = x.id();
  return x.tape()->record(transpose(x.value()), {x}, [ix](Tape& t, const Matrix& g) {
    t.accumulate(ix, transpose(g));
  });
}

inline Var add(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(add(a.value(), b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(sub(a.value(), b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.tracked(ib)) t.accumulate(ib, scale(g, -1.0));
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(hadamard(a.value(), b.value()), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            if (t.tracked(ia)) t.accumulate(ia, hadamard(g, t.value(ib)));
                            if (t.tracked(ib)) t.accumulate(ib, hadamard(g, t.value(ia)));
                          });
}

inline Var add_row(const Var& x, const Var& bias) {
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape()->record(add_row(x.value(), bias.value()), {x, bias},
                          [ix, ib](Tape& t, const Matrix& g) {
                            t.accumulate(ix, g);
                            if (!t.tracked(ib)) return;
                            Matrix db(1, g.cols());
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < g.cols(); ++j) db(0, j) += g(i, j);
                            t.accumulate(ib, db);
                          });
}

inline Var scale(const Var& x, double s) {
  const std::size_t ix = x.id();
  return x.tape()->record(scale(x.value(), s), {x},
                          [ix, s](Tape& t, const Matrix& g) { t.accumulate(ix, scale(g, s)); });
}

/// Sum of all entries as a 1×1 node.
inline Var sum_all(const Var& x) {
  const std::size_t ix = x.id();
  return x.tape()->record(Matrix(1, 1, sum_all(x.value())), {x},
                          [ix](Tape& t, const Matrix& g) {
                            const Matrix& xv = t.value(ix);
                            t.accumulate(ix, Matrix(xv.rows(), xv.cols(), g(0, 0)));
                          });
}

namespace detail {

// dx = y ∘ (g − rowsum(g ∘ y)) for any row-softmax output y.
inline Matrix softmax_backward(const Matrix& y, const Matrix& g) {
  Matrix dx(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double dot = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
    for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
  }
  return dx;
}

}  // namespace detail

inline Var softmax_rows(const Var& x) {
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape()->size();
  return x.tape()->record(softmax_rows(x.value()), {x}, [ix, iy](Tape& t, const Matrix& g) {
    t.accumulate(ix, detail::softmax_backward(t.value(iy), g));
  });
}

inline Var causal_softmax_rows(const Var& x) {
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape()->size();
  return x.tape()->record(causal_softmax_rows(x.value()), {x}, [ix, iy](Tape& t, const Matrix& g) {
    t.accumulate(ix, detail::softmax_backward(t.value(iy), g));
  });
}

inline Var log_softmax_rows(const Var& x) {
  const std::size_t ix = x.id();
  return x.tape()->record(log_softmax_rows(x.value()), {x}, [ix](Tape& t, const Matrix& g) {
    Matrix p = softmax_rows(t.value(ix));
    Matrix dx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double gs = 0;
      for (std::size_t j = 0; j < g.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) dx(i, j) = g(i, j) - p(i, j) * gs;
    }
    t.accumulate(ix, dx);
  });
}

inline Var layernorm_rows(const Var& x, double eps = kLayerNormEps) {
  const std::size_t ix = x.id();
  return x.tape()->record(layernorm_rows(x.value(), eps), {x}, [ix, eps](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    const std::size_t n = xv.cols();
    Matrix dx(xv.rows(), n);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      double mean = 0;
      for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
      mean /= static_cast<double>(n);
      double var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps);
      double gsum = 0, gxhat = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (xv(i, j) - mean) * inv;
        gsum += g(i, j);
        gxhat += g(i, j) * xhat;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (xv(i, j) - mean) * inv;
        dx(i, j) = inv / static_cast<double>(n) *
                   (static_cast<double>(n) * g(i, j) - gsum - xhat * gxhat);
      }
    }
    t.accumulate(ix, dx);
  });
}

inline Var l2norm_rows(const Var& x, double guard = kL2Guard) {
  const std::size_t ix = x.id();
  return x.tape()->record(l2norm_rows(x.value(), guard), {x}, [ix, guard](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    Matrix dx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      double ss = 0;
      for (double v : xv.row(i)) ss += v * v;
      const double norm = std::sqrt(ss);
      if (norm <= guard) {
        for (std::size_t j = 0; j < xv.cols(); ++j) dx(i, j) = g(i, j);
        continue;
      }
      double yg = 0;
      for (std::size_t j = 0; j < xv.cols(); ++j) yg += xv(i, j) / norm * g(i, j);
      for (std::size_t j = 0; j < xv.cols(); ++j)
        dx(i, j) = (g(i, j) - xv(i, j) / norm * yg) / norm;
    }
    t.accumulate(ix, dx);
  });
}

inline Var gelu(const Var& x) {
  const std::size_t ix = x.id();
  return x.tape()->record(gelu(x.value()), {x}, [ix](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    Matrix dx(xv.rows(), xv.cols());
    auto xs = xv.values();
    auto gs = g.values();
    auto ds = dx.values();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double v = xs[i];
      const double u = detail::kGeluC * (v + detail::kGeluA * v * v * v);
      const double th = std::tanh(u);
      const double du = detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * v * v);
      ds[i] = gs[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
    t.accumulate(ix, dx);
  });
}

inline Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t ix = x.id();
  return x.tape()->record(slice_cols(x.value(), begin, count), {x},
                          [ix, begin, count](Tape& t, const Matrix& g) {
                            const Matrix& xv = t.value(ix);
                            Matrix dx(xv.rows(), xv.cols());
                            for (std::size_t i = 0; i < g.rows(); ++i)
                              for (std::size_t j = 0; j < count; ++j) dx(i, begin + j) = g(i, j);
                            t.accumulate(ix, dx);
                          });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  std::vector<Matrix> values;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    values.push_back(p.value());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return parts[0].tape()->record_many(concat_cols(values), parts,
                                      [ids, widths](Tape& t, const Matrix& g) {
                                        std::size_t off = 0;
                                        for (std::size_t k = 0; k < ids.size(); ++k) {
                                          if (t.tracked(ids[k]))
                                            t.accumulate(ids[k], slice_cols(g, off, widths[k]));
                                          off += widths[k];
                                        }
                                      });
}

inline Var gather_rows(const Var& x, std::span<const std::size_t> idx) {
  const std::size_t ix = x.id();
  std::vector<std::size_t> keep(idx.begin(), idx.end());
  return x.tape()->record(gather_rows(x.value(), idx), {x}, [ix, keep](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    Matrix dx(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < keep.size(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) dx(keep[i], j) += g(i, j);
    t.accumulate(ix, dx);
  });
}

inline Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t ix = x.id();
  return x.tape()->record(slice_rows(x.value(), begin, count), {x},
                          [ix, begin, count](Tape& t, const Matrix& g) {
                            const Matrix& xv = t.value(ix);
                            Matrix dx(xv.rows(), xv.cols());
                            for (std::size_t i = 0; i < count; ++i)
                              for (std::size_t j = 0; j < g.cols(); ++j) dx(begin + i, j) = g(i, j);
                            t.accumulate(ix, dx);
                          });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  std::vector<Matrix> values;
  std::vector<std::size_t> ids, heights;
  for (const auto& p : parts) {
    values.push_back(p.value());
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  return parts[0].tape()->record_many(concat_rows(values), parts,
                                      [ids, heights](Tape& t, const Matrix& g) {
                                        std::size_t off = 0;
                                        for (std::size_t k = 0; k < ids.size(); ++k) {
                                          if (heights[k] != 0 && t.tracked(ids[k]))
                                            t.accumulate(ids[k], slice_rows(g, off, heights[k]));
                                          off += heights[k];
                                        }
                                      });
}

inline Var reshape(const Var& x, std::size_t rows, std::size_t cols) {
  const std::size_t ix = x.id();
  return x.tape()->record(reshape(x.value(), rows, cols), {x}, [ix](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    t.accumulate(ix, reshape(g, xv.rows(), xv.cols()));
  });
}

inline Var column_normalize(const Var& x, double guard = kColumnGuard) {
  const std::size_t ix = x.id();
  return x.tape()->record(column_normalize(x.value(), guard), {x}, [ix, guard](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ix);
    Matrix dx(xv.rows(), xv.cols());
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      double s = 0, gx = 0;
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        s += xv(i, j);
        gx += g(i, j) * xv(i, j);
      }
      if (s < guard) continue;
      for (std::size_t i = 0; i < xv.rows(); ++i) dx(i, j) = g(i, j) / s - gx / (s * s);
    }
    t.accumulate(ix, dx);
  });
}

}  // namespace cvlm::num
