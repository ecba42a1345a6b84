// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "gencil/tensor.hpp"

namespace gencil {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline MapMat as_mat(Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
inline ConstMapMat as_mat(const Tensor& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline std::uint64_t next_graph_serial() {
  static std::atomic<std::uint64_t> serial{1};
  return serial++;
}

}  // namespace detail

/// Handle to a value recorded on a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  std::uint64_t graph = 0;
};

struct MatmulOptions {
  bool transpose_b = false;
  double alpha = 1.0;
};

enum class GradMode { kRecord, kInference };

/// Eager reverse-mode tape. Every op computes its value immediately and, in
/// record mode, stores a local backward rule; backward() replays those rules
/// in reverse creation order, which is a valid reverse topological order.
class Graph {
 public:
  explicit Graph(GradMode mode = GradMode::kRecord)
      : serial_(detail::next_graph_serial()), mode_(mode) {
    nodes_.reserve(256);
  }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == GradMode::kRecord; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Tag attached to non-finite errors, typically the optimizer step.
  void set_step(std::int64_t step) { step_ = step; }

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }

  Var constant(Tensor t) { return push("constant", std::move(t), false, nullptr); }

  /// Binds a persistent parameter as a leaf. Binding the same parameter twice
  /// returns the same node so gradients accumulate in one place.
  Var param(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
    if (!p.value.all_finite()) fail("param:" + p.name);
    Var v = push("param", p.value, p.trainable && recording(), nullptr);
    nodes_[v.id].param = &p;
    bound_.emplace(&p, v);
    return v;
  }

  // ---- ops ---------------------------------------------------------------

  Var identity(Var a) {
    Var out = push_op("identity", node(a).value, {a});
    set_backward(out, [a](Graph& g, std::size_t self) { g.accumulate(a, g.nodes_[self].grad); });
    return out;
  }

  Var matmul(Var a, Var b, MatmulOptions opt = {}) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    const std::size_t inner_b = opt.transpose_b ? B.cols() : B.rows();
    const std::size_t out_cols = opt.transpose_b ? B.rows() : B.cols();
    if (A.cols() != inner_b)
      shape_fail("matmul", A.shape(), B.shape());
    Tensor C({A.rows(), out_cols});
    auto Cm = detail::as_mat(C);
    if (opt.transpose_b)
      Cm.noalias() = opt.alpha * (detail::as_mat(A) * detail::as_mat(B).transpose());
    else
      Cm.noalias() = opt.alpha * (detail::as_mat(A) * detail::as_mat(B));
    Var out = push_op("matmul", std::move(C), {a, b});
    set_backward(out, [a, b, opt](Graph& g, std::size_t self) {
      const Tensor& dC = g.nodes_[self].grad;
      auto dCm = detail::as_mat(dC);
      const Tensor& A = g.nodes_[a.id].value;
      const Tensor& B = g.nodes_[b.id].value;
      if (g.nodes_[a.id].requires_grad) {
        Tensor dA(A.shape());
        if (opt.transpose_b)
          detail::as_mat(dA).noalias() = opt.alpha * (dCm * detail::as_mat(B));
        else
          detail::as_mat(dA).noalias() = opt.alpha * (dCm * detail::as_mat(B).transpose());
        g.accumulate(a, dA);
      }
      if (g.nodes_[b.id].requires_grad) {
        Tensor dB(B.shape());
        if (opt.transpose_b)
          detail::as_mat(dB).noalias() = opt.alpha * (dCm.transpose() * detail::as_mat(A));
        else
          detail::as_mat(dB).noalias() = opt.alpha * (detail::as_mat(A).transpose() * dCm);
        g.accumulate(b, dB);
      }
    });
    return out;
  }

  Var add(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (A.shape() != B.shape()) shape_fail("add", A.shape(), B.shape());
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    Var out = push_op("add", std::move(C), {a, b});
    set_backward(out, [a, b](Graph& g, std::size_t self) {
      const Tensor& d = g.nodes_[self].grad;
      g.accumulate(a, d);
      g.accumulate(b, d);
    });
    return out;
  }

  /// a[rows x n] + bias (n elements) broadcast over rows.
  Var add_row(Var a, Var bias) {
    const Tensor& A = node(a).value;
    const Tensor& b = node(bias).value;
    if (b.size() != A.cols()) shape_fail("add_row", A.shape(), b.shape());
    Tensor C = A;
    const std::size_t n = A.cols();
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) C[r * n + c] += b[c];
    Var out = push_op("add_row", std::move(C), {a, bias});
    set_backward(out, [a, bias](Graph& g, std::size_t self) {
      const Tensor& d = g.nodes_[self].grad;
      g.accumulate(a, d);
      if (g.nodes_[bias.id].requires_grad) {
        Tensor db(g.nodes_[bias.id].value.shape());
        const std::size_t n = d.cols();
        for (std::size_t r = 0; r < d.rows(); ++r)
          for (std::size_t c = 0; c < n; ++c) db[c] += d[r * n + c];
        g.accumulate(bias, db);
      }
    });
    return out;
  }

  Var tanh(Var a) {
    Tensor Y = node(a).value;
    for (double& v : Y.values()) v = std::tanh(v);
    Var out = push_op("tanh", std::move(Y), {a});
    set_backward(out, [a](Graph& g, std::size_t self) {
      const Tensor& y = g.nodes_[self].value;
      Tensor dx = g.nodes_[self].grad;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - y[i] * y[i];
      g.accumulate(a, dx);
    });
    return out;
  }

  /// GELU, tanh approximation.
  Var gelu(Var a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    const Tensor& X = node(a).value;
    Tensor Y(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double x = X[i];
      Y[i] = 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
    }
    Var out = push_op("gelu", std::move(Y), {a});
    set_backward(out, [a](Graph& g, std::size_t self) {
      const Tensor& X = g.nodes_[a.id].value;
      Tensor dx = g.nodes_[self].grad;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double x = X[i];
        const double t = std::tanh(k * (x + 0.044715 * x * x * x));
        const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
        dx[i] *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      }
      g.accumulate(a, dx);
    });
    return out;
  }

  /// Row-wise softmax over the last dimension. With `causal`, entry (i, j)
  /// for j > i is excluded and set to exactly zero.
  Var softmax(Var a, bool causal = false) {
    const Tensor& X = node(a).value;
    Tensor P(X.shape());
    const std::size_t n = X.cols();
    if (causal && X.rows() > n) shape_fail("softmax(causal)", X.shape(), X.shape());
    for (std::size_t r = 0; r < X.rows(); ++r) {
      const std::size_t end = causal ? r + 1 : n;
      const double* x = X.data() + r * n;
      double* p = P.data() + r * n;
      double mx = x[0];
      for (std::size_t c = 1; c < end; ++c) mx = std::max(mx, x[c]);
      double z = 0.0;
      for (std::size_t c = 0; c < end; ++c) z += (p[c] = std::exp(x[c] - mx));
      for (std::size_t c = 0; c < end; ++c) p[c] /= z;
    }
    Var out = push_op("softmax", std::move(P), {a});
    set_backward(out, [a](Graph& g, std::size_t self) {
      const Tensor& P = g.nodes_[self].value;
      const Tensor& dP = g.nodes_[self].grad;
      Tensor dx(P.shape());
      const std::size_t n = P.cols();
      for (std::size_t r = 0; r < P.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += dP[r * n + c] * P[r * n + c];
        for (std::size_t c = 0; c < n; ++c)
          dx[r * n + c] = P[r * n + c] * (dP[r * n + c] - dot);
      }
      g.accumulate(a, dx);
    });
    return out;
  }

  /// Embedding lookup: out[i] = table[ids[i]]; id -1 yields a zero row.
  Var gather_rows(Var table, std::vector<long> ids) {
    const Tensor& T = node(table).value;
    const std::size_t n = T.cols();
    for (long id : ids)
      if (id < -1 || id >= static_cast<long>(T.rows()))
        throw NumericsError("gather_rows: id " + std::to_string(id) + " outside table of " +
                            std::to_string(T.rows()) + " rows");
    if (ids.empty()) throw NumericsError("gather_rows: empty id list");
    Tensor Y({ids.size(), n});
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] >= 0) std::copy_n(T.data() + ids[i] * n, n, Y.data() + i * n);
    Var out = push_op("gather_rows", std::move(Y), {table});
    set_backward(out, [table, ids = std::move(ids)](Graph& g, std::size_t self) {
      const Tensor& dY = g.nodes_[self].grad;
      Tensor dT(g.nodes_[table.id].value.shape());
      const std::size_t n = dT.cols();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0) continue;
        double* dst = dT.data() + ids[i] * n;
        const double* src = dY.data() + i * n;
        for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
      }
      g.accumulate(table, dT);
    });
    return out;
  }

  /// Concatenates along the row (sequence) axis. All parts share cols.
  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericsError("concat_rows: no inputs");
    const std::size_t n = node(parts[0]).value.cols();
    std::size_t rows = 0;
    for (Var p : parts) {
      const Tensor& t = node(p).value;
      if (t.cols() != n) shape_fail("concat_rows", node(parts[0]).value.shape(), t.shape());
      rows += t.rows();
    }
    Tensor Y({rows, n});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& t = node(p).value;
      std::copy_n(t.data(), t.size(), Y.data() + off);
      off += t.size();
    }
    Var out = push_op("concat_rows", std::move(Y), parts);
    set_backward(out, [parts](Graph& g, std::size_t self) {
      const Tensor& dY = g.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        const Tensor& t = g.nodes_[p.id].value;
        if (g.nodes_[p.id].requires_grad) {
          Tensor d(t.shape());
          std::copy_n(dY.data() + off, t.size(), d.data());
          g.accumulate(p, d);
        }
        off += t.size();
      }
    });
    return out;
  }

  /// Row-major reinterpretation; values are untouched.
  Var reshape(Var a, std::size_t rows, std::size_t cols) {
    const Tensor& X = node(a).value;
    if (rows * cols != X.size()) shape_fail("reshape", X.shape(), {rows, cols});
    Var out = push_op("reshape", Tensor({rows, cols}, X.storage()), {a});
    set_backward(out, [a](Graph& g, std::size_t self) {
      const Tensor& d = g.nodes_[self].grad;
      g.accumulate(a, Tensor(g.nodes_[a.id].value.shape(), d.storage()));
    });
    return out;
  }

  /// Row-wise layer normalization with learned gain and bias.
  Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5) {
    const Tensor& X = node(a).value;
    const Tensor& G = node(gain).value;
    const Tensor& B = node(bias).value;
    const std::size_t n = X.cols();
    if (G.size() != n || B.size() != n) shape_fail("layer_norm", X.shape(), G.shape());
    Tensor Y(X.shape());
    Tensor xhat(X.shape());
    std::vector<double> inv_std(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) {
      const double* x = X.data() + r * n;
      double mean = 0.0;
      for (std::size_t c = 0; c < n; ++c) mean += x[c];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t c = 0; c < n; ++c) var += (x[c] - mean) * (x[c] - mean);
      var /= static_cast<double>(n);
      inv_std[r] = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = 0; c < n; ++c) {
        const double h = (x[c] - mean) * inv_std[r];
        xhat[r * n + c] = h;
        Y[r * n + c] = h * G[c] + B[c];
      }
    }
    Var out = push_op("layer_norm", std::move(Y), {a, gain, bias});
    set_backward(out, [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                          Graph& g, std::size_t self) {
      const Tensor& dY = g.nodes_[self].grad;
      const Tensor& G = g.nodes_[gain.id].value;
      const std::size_t n = dY.cols();
      const std::size_t rows = dY.rows();
      if (g.nodes_[gain.id].requires_grad || g.nodes_[bias.id].requires_grad) {
        Tensor dG(G.shape());
        Tensor dB(G.shape());
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < n; ++c) {
            dG[c] += dY[r * n + c] * xhat[r * n + c];
            dB[c] += dY[r * n + c];
          }
        g.accumulate(gain, dG);
        g.accumulate(bias, dB);
      }
      if (g.nodes_[a.id].requires_grad) {
        Tensor dX(dY.shape());
        std::vector<double> dh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            dh[c] = dY[r * n + c] * G[c];
            m1 += dh[c];
            m2 += dh[c] * xhat[r * n + c];
          }
          m1 /= static_cast<double>(n);
          m2 /= static_cast<double>(n);
          for (std::size_t c = 0; c < n; ++c)
            dX[r * n + c] = inv_std[r] * (dh[c] - m1 - xhat[r * n + c] * m2);
        }
        g.accumulate(a, dX);
      }
    });
    return out;
  }

  /// Weighted token cross-entropy from logits, fused with log-softmax:
  ///   loss = -sum_r weights[r] * log softmax(logits[r])[targets[r]].
  /// Rows with zero weight are skipped and may carry any target.
  Var cross_entropy(Var logits, std::vector<long> targets, std::vector<double> weights) {
    const Tensor& L = node(logits).value;
    check_ce_args("cross_entropy", L, targets, weights);
    const std::size_t n = L.cols();
    Tensor probs(L.shape());
    double loss = 0.0;
    for (std::size_t r = 0; r < L.rows(); ++r) {
      if (weights[r] == 0.0) continue;
      const double* x = L.data() + r * n;
      double* p = probs.data() + r * n;
      double mx = x[0];
      for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, x[c]);
      double z = 0.0;
      for (std::size_t c = 0; c < n; ++c) z += (p[c] = std::exp(x[c] - mx));
      for (std::size_t c = 0; c < n; ++c) p[c] /= z;
      loss -= weights[r] * (x[targets[r]] - mx - std::log(z));
    }
    Var out = push_op("cross_entropy", Tensor::scalar(loss), {logits});
    set_backward(out, [logits, targets = std::move(targets), weights = std::move(weights),
                       probs = std::move(probs)](Graph& g, std::size_t self) {
      const double up = g.nodes_[self].grad[0];
      Tensor dL(probs.shape());
      const std::size_t n = probs.cols();
      for (std::size_t r = 0; r < probs.rows(); ++r) {
        if (weights[r] == 0.0) continue;
        const double w = up * weights[r];
        for (std::size_t c = 0; c < n; ++c) dL[r * n + c] = w * probs[r * n + c];
        dL[r * n + targets[r]] -= w;
      }
      g.accumulate(logits, dL);
    });
    return out;
  }

  /// Weighted cross-entropy over already-normalized probabilities:
  ///   loss = -sum_r weights[r] * log probs[r][targets[r]].
  Var cross_entropy_probs(Var probs, std::vector<long> targets, std::vector<double> weights) {
    const Tensor& P = node(probs).value;
    check_ce_args("cross_entropy_probs", P, targets, weights);
    const std::size_t n = P.cols();
    double loss = 0.0;
    for (std::size_t r = 0; r < P.rows(); ++r)
      if (weights[r] != 0.0) loss -= weights[r] * std::log(P[r * n + targets[r]]);
    Var out = push_op("cross_entropy_probs", Tensor::scalar(loss), {probs});
    set_backward(out, [probs, targets = std::move(targets), weights = std::move(weights)](
                          Graph& g, std::size_t self) {
      const double up = g.nodes_[self].grad[0];
      const Tensor& P = g.nodes_[probs.id].value;
      Tensor dP(P.shape());
      const std::size_t n = P.cols();
      for (std::size_t r = 0; r < P.rows(); ++r)
        if (weights[r] != 0.0) dP[r * n + targets[r]] = -up * weights[r] / P[r * n + targets[r]];
      g.accumulate(probs, dP);
    });
    return out;
  }

  // ---- backward ----------------------------------------------------------

  /// Zeroes the gradients of every bound parameter, back-propagates from a
  /// scalar loss and returns d(loss)/d(param) keyed by parameter name.
  std::map<std::string, Tensor> backward(Var loss) {
    if (loss.graph != serial_ || loss.id >= nodes_.size())
      throw NumericsError("backward: loss was not produced by this graph's forward");
    if (!recording()) throw NumericsError("backward: graph built in inference mode");
    if (backward_done_) throw NumericsError("backward: already run on this graph");
    if (nodes_[loss.id].value.size() != 1)
      throw NumericsError("backward: loss is not scalar, shape " +
                          shape_string(nodes_[loss.id].value.shape()));
    backward_done_ = true;
    for (auto& [p, v] : bound_) p->zero_grad();
    if (nodes_[loss.id].requires_grad) {
      nodes_[loss.id].grad = Tensor(nodes_[loss.id].value.shape(), 1.0);
      for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& nd = nodes_[i];
        if (!nd.requires_grad || nd.grad.empty()) continue;
        if (nd.param != nullptr) {
          Tensor& pg = nd.param->grad;
          for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += nd.grad[k];
        } else if (nd.backward) {
          nd.backward(*this, i);
        }
      }
    }
    std::map<std::string, Tensor> grads;
    for (auto& [p, v] : bound_)
      if (p->trainable) grads.emplace(p->name, p->grad);
    return grads;
  }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, std::size_t)> backward;
  };

  const Node& node(Var v) const {
    if (v.graph != serial_ || v.id >= nodes_.size())
      throw NumericsError("graph: variable does not belong to this graph");
    return nodes_[v.id];
  }

  Var push(std::string_view op, Tensor value, bool requires_grad, std::nullptr_t) {
    Node nd;
    nd.op = op;
    nd.value = std::move(value);
    nd.requires_grad = requires_grad;
    nodes_.push_back(std::move(nd));
    return Var{nodes_.size() - 1, serial_};
  }

  Var push_op(std::string_view op, Tensor value, std::initializer_list<Var> inputs) {
    return push_op(op, std::move(value), std::vector<Var>(inputs));
  }

  Var push_op(std::string_view op, Tensor value, const std::vector<Var>& inputs) {
    if (!value.all_finite()) fail(std::string(op));
    bool rg = false;
    if (recording())
      for (Var in : inputs) rg = rg || node(in).requires_grad;
    return push(op, std::move(value), rg, nullptr);
  }

  template <typename F>
  void set_backward(Var out, F&& f) {
    if (nodes_[out.id].requires_grad) nodes_[out.id].backward = std::forward<F>(f);
  }

  void accumulate(Var v, const Tensor& d) {
    Node& nd = nodes_[v.id];
    if (!nd.requires_grad) return;
    if (nd.grad.empty()) {
      nd.grad = d;
    } else {
      for (std::size_t i = 0; i < d.size(); ++i) nd.grad[i] += d[i];
    }
  }

  [[noreturn]] void fail(const std::string& op) const {
    std::string msg = "non-finite value produced by op '" + op + "' at node " +
                      std::to_string(nodes_.size());
    if (step_ >= 0) msg += " (step " + std::to_string(step_) + ")";
    throw NumericsError(msg);
  }

  [[noreturn]] static void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
    throw NumericsError(op + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }

  static void check_ce_args(const char* op, const Tensor& L, const std::vector<long>& targets,
                            const std::vector<double>& weights) {
    if (targets.size() != L.rows() || weights.size() != L.rows())
      throw NumericsError(std::string(op) + ": need one target and weight per row");
    bool any = false;
    for (std::size_t r = 0; r < L.rows(); ++r) {
      if (weights[r] == 0.0) continue;
      any = true;
      if (targets[r] < 0 || targets[r] >= static_cast<long>(L.cols()))
        throw NumericsError(std::string(op) + ": target " + std::to_string(targets[r]) +
                            " outside vocabulary of " + std::to_string(L.cols()));
    }
    if (!any) throw NumericsError(std::string(op) + ": empty mask");
  }

  std::uint64_t serial_;
  GradMode mode_;
  std::int64_t step_ = -1;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, Var> bound_;
};

/// Mean negative log-probability of the targets over masked rows:
/// -(1/m) * sum over masked r of log probs[r][targets[r]].
inline Var token_cross_entropy(Graph& g, Var probs, const std::vector<long>& targets,
                               const std::vector<bool>& mask) {
  const std::size_t m = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (m == 0) throw NumericsError("token_cross_entropy: empty mask");
  std::vector<double> w(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? 1.0 / static_cast<double>(m) : 0.0;
  return g.cross_entropy_probs(probs, targets, std::move(w));
}

}  // namespace gencil
