// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gencil/graph.hpp"

namespace gencil {

/// lr_min + (lr_base - lr_min) * (1 + cos(pi * step / total)) / 2
inline double cosine_lr(std::int64_t step, std::int64_t total, double lr_base, double lr_min) {
  if (total < 1) throw std::invalid_argument("cosine_lr: total steps must be >= 1");
  if (step < 0 || step > total)
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total) + "]");
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_base - lr_min) * (1.0 + std::cos(phase));
}

struct OptimizerState {
  double lr_base = 0.0;
  double lr_min = 0.0;
  std::int64_t step = 0;
  std::int64_t total = 1;

  OptimizerState() = default;
  OptimizerState(double base, double min, std::int64_t total_steps)
      : lr_base(base), lr_min(min), total(total_steps) {
    if (lr_min < 0.0 || lr_min > lr_base)
      throw std::invalid_argument("optimizer: need 0 <= lr_min <= lr_base");
    if (total < 1) throw std::invalid_argument("optimizer: total steps must be >= 1");
  }

  double current_lr() const { return cosine_lr(step, total, lr_base, lr_min); }
};

/// Plain SGD, p <- p - lr(step) * g, over trainable parameters. Returns the
/// learning rate that was applied.
inline double sgd_step(std::span<Parameter* const> params, OptimizerState& state) {
  if (state.step >= state.total)
    throw std::out_of_range("sgd_step: schedule exhausted at step " + std::to_string(state.step));
  for (const Parameter* p : params)
    if (p->grad.shape() != p->value.shape())
      throw NumericsError("sgd_step: gradient shape " + shape_string(p->grad.shape()) +
                          " does not match parameter '" + p->name + "' " +
                          shape_string(p->value.shape()));
  const double lr = state.current_lr();
  if (lr != 0.0) {
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      auto v = p->value.values();
      auto g = p->grad.values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
  }
  ++state.step;
  return lr;
}

inline double sgd_step(std::vector<Parameter*>& params, OptimizerState& state) {
  return sgd_step(std::span<Parameter* const>(params), state);
}

enum class OptimizerKind { kSgd, kAdam };

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("optimizer: unknown kind '" + s + "' (expected sgd or adam)");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

/// Cosine-scheduled SGD or Adam. Adam moments are kept per parameter object,
/// so one optimizer must always be stepped with the same parameters.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, OptimizerState state, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8)
      : kind_(kind), state_(state), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  const OptimizerState& state() const { return state_; }
  OptimizerKind kind() const { return kind_; }

  double step(std::span<Parameter* const> params) {
    if (kind_ == OptimizerKind::kSgd) return sgd_step(params, state_);
    if (state_.step >= state_.total)
      throw std::out_of_range("adam_step: schedule exhausted at step " + std::to_string(state_.step));
    const double lr = state_.current_lr();
    const double t = static_cast<double>(state_.step + 1);
    const double c1 = 1.0 - std::pow(beta1_, t), c2 = 1.0 - std::pow(beta2_, t);
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      if (p->grad.shape() != p->value.shape())
        throw NumericsError("adam_step: gradient shape mismatch for '" + p->name + "'");
      auto& [m, v] = moments_[p];
      if (m.size() != p->value.size()) {
        m.assign(p->value.size(), 0.0);
        v.assign(p->value.size(), 0.0);
      }
      auto w = p->value.values();
      auto g = p->grad.values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        if (lr != 0.0) w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
    ++state_.step;
    return lr;
  }

  double step(std::vector<Parameter*>& params) { return step(std::span<Parameter* const>(params)); }

 private:
  OptimizerKind kind_;
  OptimizerState state_;
  double beta1_, beta2_, eps_;
  std::unordered_map<const Parameter*, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace gencil
