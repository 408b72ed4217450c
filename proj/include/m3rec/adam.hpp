// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "m3rec/autodiff.hpp"
#include "m3rec/errors.hpp"

namespace m3rec {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix m;  // first-moment estimate
  Matrix v;  // second-moment estimate
};

// One bias-corrected update of a single parameter from its accumulated grad.
inline void adam_step(Parameter& p, AdamState& st, const AdamConfig& cfg,
                      std::int64_t t) {
  if (t < 1) throw ConfigError("adam_step: t must be >= 1");
  if (st.m.empty()) st.m = Matrix(p.value.rows(), p.value.cols());
  if (st.v.empty()) st.v = Matrix(p.value.rows(), p.value.cols());
  if (!st.m.same_shape(p.value) || !st.v.same_shape(p.value))
    throw ShapeError("adam_step: state shape " + st.m.shape_str() + " vs parameter " +
                     p.value.shape_str());
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  Matrix& value = p.value;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = p.grad[i];
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    value[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Drives adam_step across a fixed parameter list with one shared step counter.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg), states_(params_.size()) {}

  void step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i)
      adam_step(*params_[i], states_[i], cfg_, t_);
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<AdamState> states_;
  std::int64_t t_ = 0;
};

}  // namespace m3rec
