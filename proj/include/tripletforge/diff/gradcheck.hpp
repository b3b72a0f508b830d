#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tripletforge/diff/graph.hpp"
#include "tripletforge/diff/tensor.hpp"

namespace tforge::diff {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double eps = 1e-6;
  // 0 checks every coordinate; otherwise the largest-gradient coordinate plus
  // a seeded random sample, up to this many per tensor.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares backprop gradients of several scalar objectives against central
/// differences (f(x+eps) - f(x-eps)) / (2 eps). The error per coordinate is
/// |analytic - numeric| / max(1, |analytic|). Results are indexed
/// [objective][input].
///
/// `f` must rebuild every objective from the given tensors on each call and be
/// deterministic; it is evaluated once on a recording graph and twice per
/// checked coordinate on non-recording graphs, so objectives sharing a forward
/// pass are perturbed together.
inline std::vector<std::vector<GradCheckResult>> check_gradients_multi(
    const std::function<std::vector<Tensor>(Graph&)>& f, const std::vector<NamedTensor>& inputs,
    const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0.0 && opt.eps <= 1e-2)) {
    throw ConfigError("check_gradient: eps must be in (0, 1e-2], got " + std::to_string(opt.eps));
  }
  for (const auto& in : inputs) {
    Tensor t = in.tensor;
    t.set_requires_grad(true);
  }
  Graph graph;
  std::vector<Tensor> losses = f(graph);
  const std::size_t count = losses.size();
  // analytic[objective][input]
  std::vector<std::vector<std::vector<double>>> analytic(count);
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::isfinite(losses[k].item())) throw NumericalError("check_gradient: f(x) is not finite");
    for (const auto& in : inputs) {
      Tensor t = in.tensor;
      t.zero_grad();
    }
    graph.backprop(losses[k]);
    for (const auto& in : inputs) analytic[k].emplace_back(in.tensor.grad().begin(), in.tensor.grad().end());
  }

  auto evaluate = [&f, count]() {
    Graph probe(false);
    std::vector<double> v;
    for (const Tensor& t : f(probe)) {
      v.push_back(t.item());
      if (!std::isfinite(v.back())) throw NumericalError("check_gradient: f(x +/- eps) is not finite");
    }
    if (v.size() != count) throw Error("check_gradient: objective count changed between calls");
    return v;
  };

  std::mt19937_64 rng(opt.seed);
  std::vector<std::vector<GradCheckResult>> results(count);
  for (std::size_t in_idx = 0; in_idx < inputs.size(); ++in_idx) {
    Tensor t = inputs[in_idx].tensor;
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coordinates != 0 && coords.size() > opt.max_coordinates) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coordinates - 1);
      // Always include the coordinate with the largest gradient across objectives.
      std::vector<double> magnitude(t.size(), 0.0);
      for (std::size_t k = 0; k < count; ++k)
        for (std::size_t i = 0; i < t.size(); ++i) magnitude[i] += std::abs(analytic[k][in_idx][i]);
      auto largest = static_cast<std::size_t>(std::max_element(magnitude.begin(), magnitude.end()) - magnitude.begin());
      if (std::find(coords.begin(), coords.end(), largest) == coords.end()) coords.push_back(largest);
    }

    for (std::size_t k = 0; k < count; ++k) results[k].push_back({inputs[in_idx].name, 0.0, coords.size()});
    auto values = t.values();
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + opt.eps;
      const auto up = evaluate();
      values[i] = saved - opt.eps;
      const auto down = evaluate();
      values[i] = saved;
      for (std::size_t k = 0; k < count; ++k) {
        const double numeric = (up[k] - down[k]) / (2.0 * opt.eps);
        const double a = analytic[k][in_idx][i];
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        results[k].back().max_error = std::max(results[k].back().max_error, err);
      }
    }
  }
  return results;
}

/// Single-objective form of check_gradients_multi.
inline std::vector<GradCheckResult> check_gradients(const std::function<Tensor(Graph&)>& f,
                                                    const std::vector<NamedTensor>& inputs,
                                                    const GradCheckOptions& opt = {}) {
  return check_gradients_multi([&f](Graph& g) { return std::vector<Tensor>{f(g)}; }, inputs, opt).front();
}

/// Single-tensor form: max relative error of d f(x) / dx.
inline double check_gradient(const std::function<Tensor(Graph&, const Tensor&)>& f, const Tensor& x,
                             double eps = 1e-6) {
  GradCheckOptions opt;
  opt.eps = eps;
  auto results = check_gradients([&](Graph& g) { return f(g, x); }, {{"x", x}}, opt);
  return results.front().max_error;
}

}  // namespace tforge::diff
