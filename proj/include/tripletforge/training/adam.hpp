#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "tripletforge/diff/tensor.hpp"
#include "tripletforge/error.hpp"

namespace tforge::training {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  }
};

struct AdamState {
  std::size_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One Adam update of `params` from their accumulated gradients, with bias
/// correction. Returns false and leaves everything (t included) untouched
/// when any gradient is non-finite.
inline bool adam_step(const std::vector<diff::Tensor>& params, AdamState& state, const AdamConfig& cfg) {
  using Array = Eigen::Map<Eigen::ArrayXd>;
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ConfigError("adam_step: parameter without gradient");
    if (!Array(p.grad().data(), static_cast<Eigen::Index>(p.size())).allFinite()) return false;
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto n = static_cast<Eigen::Index>(params[k].size());
    if (state.m[k].size() != params[k].size()) throw ShapeError("adam_step: moment shape mismatch");
    diff::Tensor p = params[k];
    Array w(p.values().data(), n), g(p.grad().data(), n);
    Array m(state.m[k].data(), n), v(state.v[k].data(), n);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    w -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
  }
  return true;
}

}  // namespace tforge::training
