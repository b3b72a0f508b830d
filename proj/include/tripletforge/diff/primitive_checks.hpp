#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tripletforge/diff/gradcheck.hpp"
#include "tripletforge/diff/ops.hpp"

// Finite-difference sweep over every primitive on small random shapes. Each
// op output is contracted with a fixed random tensor so the checked function
// is scalar and exercises every output element.

namespace tforge::diff {

struct PrimitiveCheck {
  std::string op;
  double max_error = 0.0;
  std::size_t trials = 0;
};

namespace detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor project(Graph& g, const Tensor& out, const Tensor& weights) {
  return dot(g, out, weights);
}

// One trial: builds inputs from rng and returns the max error over them.
using PrimitiveTrial = std::function<double(std::mt19937_64&, double eps)>;

template <class Op>
double projected_check(const std::vector<NamedTensor>& inputs, const Tensor& weights, Op op, double eps) {
  GradCheckOptions opt;
  opt.eps = eps;
  auto res = check_gradients([&](Graph& g) { return project(g, op(g), weights); }, inputs, opt);
  double worst = 0.0;
  for (const auto& r : res) worst = std::max(worst, r.max_error);
  return worst;
}

template <class Op>
PrimitiveTrial elementwise_trial(Op op, double lo = -2.0, double hi = 2.0) {
  return [op, lo, hi](std::mt19937_64& rng, double eps) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 5)};
    Tensor x = random_tensor(s, rng, lo, hi);
    Graph probe(false);
    Tensor w = random_tensor(op(probe, x).shape(), rng);
    return projected_check({{"x", x}}, w, [&](Graph& g) { return op(g, x); }, eps);
  };
}

template <class Op>
PrimitiveTrial binary_trial(Op op) {
  return [op](std::mt19937_64& rng, double eps) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 5)};
    Tensor a = random_tensor(s, rng), b = random_tensor(s, rng), w = random_tensor(s, rng);
    return projected_check({{"a", a}, {"b", b}}, w, [&](Graph& g) { return op(g, a, b); }, eps);
  };
}

inline std::vector<std::pair<std::string, PrimitiveTrial>> primitive_trials() {
  std::vector<std::pair<std::string, PrimitiveTrial>> trials;
  trials.emplace_back("add", binary_trial([](Graph& g, const Tensor& a, const Tensor& b) { return add(g, a, b); }));
  trials.emplace_back("sub", binary_trial([](Graph& g, const Tensor& a, const Tensor& b) { return sub(g, a, b); }));
  trials.emplace_back("mul", binary_trial([](Graph& g, const Tensor& a, const Tensor& b) { return mul(g, a, b); }));
  trials.emplace_back("relu", elementwise_trial([](Graph& g, const Tensor& x) { return relu(g, x); }));
  trials.emplace_back("tanh", elementwise_trial([](Graph& g, const Tensor& x) { return tanh(g, x); }));
  trials.emplace_back("sigmoid", elementwise_trial([](Graph& g, const Tensor& x) { return sigmoid(g, x); }));
  trials.emplace_back("exp", elementwise_trial([](Graph& g, const Tensor& x) { return exp(g, x); }));
  trials.emplace_back("log", elementwise_trial([](Graph& g, const Tensor& x) { return log(g, x); }, 0.5, 3.0));
  trials.emplace_back("softplus", elementwise_trial([](Graph& g, const Tensor& x) { return softplus(g, x); }, -8.0, 8.0));
  trials.emplace_back("scale", elementwise_trial([](Graph& g, const Tensor& x) { return scale(g, x, -1.7); }));
  trials.emplace_back("softmax", elementwise_trial([](Graph& g, const Tensor& x) { return softmax(g, x); }));
  trials.emplace_back("l2norm", elementwise_trial([](Graph& g, const Tensor& x) { return l2norm(g, x); }));
  trials.emplace_back("normalize_rows",
                      elementwise_trial([](Graph& g, const Tensor& x) { return normalize_rows(g, x); }));
  trials.emplace_back("dropout_mask", elementwise_trial([](Graph& g, const Tensor& x) {
                        std::mt19937_64 mask_rng(99);
                        return dropout_mask(g, x, 0.5, mask_rng);
                      }));

  trials.emplace_back("sum", [](std::mt19937_64& rng, double eps) {
    Tensor x = random_tensor({draw(rng, 1, 4), draw(rng, 1, 5)}, rng);
    GradCheckOptions opt;
    opt.eps = eps;
    return check_gradients([&](Graph& g) { return sum(g, x); }, {{"x", x}}, opt).front().max_error;
  });
  trials.emplace_back("mean", [](std::mt19937_64& rng, double eps) {
    Tensor x = random_tensor({draw(rng, 1, 4), draw(rng, 1, 5)}, rng);
    GradCheckOptions opt;
    opt.eps = eps;
    return check_gradients([&](Graph& g) { return mean(g, x); }, {{"x", x}}, opt).front().max_error;
  });
  trials.emplace_back("dot", [](std::mt19937_64& rng, double eps) {
    Shape s{draw(rng, 1, 4), draw(rng, 1, 5)};
    Tensor a = random_tensor(s, rng), b = random_tensor(s, rng);
    GradCheckOptions opt;
    opt.eps = eps;
    auto r = check_gradients([&](Graph& g) { return dot(g, a, b); }, {{"a", a}, {"b", b}}, opt);
    return std::max(r[0].max_error, r[1].max_error);
  });
  trials.emplace_back("rowwise_dot", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 4), d = draw(rng, 1, 5);
    Tensor a = random_tensor({n, d}, rng), b = random_tensor({n, d}, rng), w = random_tensor({n}, rng);
    return projected_check({{"a", a}, {"b", b}}, w, [&](Graph& g) { return rowwise_dot(g, a, b); }, eps);
  });
  trials.emplace_back("matmul", [](std::mt19937_64& rng, double eps) {
    std::size_t m = draw(rng, 1, 4), k = draw(rng, 1, 5), n = draw(rng, 1, 4);
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), w = random_tensor({m, n}, rng);
    return projected_check({{"a", a}, {"b", b}}, w, [&](Graph& g) { return matmul(g, a, b); }, eps);
  });
  trials.emplace_back("add_bias", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), t = draw(rng, 1, 4), f = draw(rng, 1, 5);
    Tensor x = random_tensor({n, t, f}, rng), b = random_tensor({f}, rng), w = random_tensor({n, t, f}, rng);
    return projected_check({{"x", x}, {"bias", b}}, w, [&](Graph& g) { return add_bias(g, x, b); }, eps);
  });
  trials.emplace_back("reshape", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), f = draw(rng, 1, 4);
    Tensor x = random_tensor({n, f}, rng), w = random_tensor({n * f}, rng);
    return projected_check({{"x", x}}, w, [&](Graph& g) { return reshape(g, x, {n * f}); }, eps);
  });
  trials.emplace_back("gather_rows", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 5), d = draw(rng, 1, 4), m = draw(rng, 1, 8);
    std::vector<std::size_t> idx(m);
    for (auto& i : idx) i = draw(rng, 0, n - 1);
    Tensor x = random_tensor({n, d}, rng), w = random_tensor({m, d}, rng);
    return projected_check({{"x", x}}, w, [&](Graph& g) { return gather_rows(g, x, idx); }, eps);
  });
  trials.emplace_back("concat_last", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), t = draw(rng, 1, 3), fa = draw(rng, 1, 4), fb = draw(rng, 1, 4);
    Tensor a = random_tensor({n, t, fa}, rng), b = random_tensor({n, t, fb}, rng);
    Tensor w = random_tensor({n, t, fa + fb}, rng);
    return projected_check({{"a", a}, {"b", b}}, w, [&](Graph& g) { return concat_last(g, a, b); }, eps);
  });
  trials.emplace_back("select_step", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), t = draw(rng, 1, 5), f = draw(rng, 1, 4);
    std::size_t at = draw(rng, 0, t - 1);
    Tensor x = random_tensor({n, t, f}, rng), w = random_tensor({n, f}, rng);
    return projected_check({{"x", x}}, w, [&](Graph& g) { return select_step(g, x, at); }, eps);
  });
  trials.emplace_back("stack_steps", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), t = draw(rng, 1, 4), f = draw(rng, 1, 4);
    std::vector<NamedTensor> inputs;
    std::vector<Tensor> steps;
    for (std::size_t i = 0; i < t; ++i) {
      steps.push_back(random_tensor({n, f}, rng));
      inputs.push_back({"step" + std::to_string(i), steps.back()});
    }
    Tensor w = random_tensor({n, t, f}, rng);
    return projected_check(inputs, w, [&](Graph& g) { return stack_steps(g, steps); }, eps);
  });
  trials.emplace_back("softmax_cross_entropy", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 4), k = draw(rng, 2, 6);
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(draw(rng, 0, k - 1));
    Tensor x = random_tensor({n, k}, rng, -3.0, 3.0);
    GradCheckOptions opt;
    opt.eps = eps;
    return check_gradients([&](Graph& g) { return softmax_cross_entropy(g, x, labels); }, {{"logits", x}}, opt)
        .front()
        .max_error;
  });
  trials.emplace_back("conv1d", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), len = draw(rng, 1, 9), c = draw(rng, 1, 3), k = draw(rng, 1, 5),
                f = draw(rng, 1, 4);
    Tensor x = random_tensor({n, len, c}, rng), wt = random_tensor({k * c, f}, rng), b = random_tensor({f}, rng);
    Tensor w = random_tensor({n, len, f}, rng);
    return projected_check({{"x", x}, {"weight", wt}, {"bias", b}}, w,
                           [&](Graph& g) { return conv1d(g, x, wt, b); }, eps);
  });
  trials.emplace_back("maxpool1d", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), pool = draw(rng, 1, 3), len = draw(rng, pool, 10), c = draw(rng, 1, 3);
    std::size_t stride = draw(rng, 1, 3);
    Tensor x = random_tensor({n, len, c}, rng);
    Tensor w = random_tensor({n, (len - pool) / stride + 1, c}, rng);
    return projected_check({{"x", x}}, w, [&](Graph& g) { return maxpool1d(g, x, pool, stride); }, eps);
  });
  trials.emplace_back("global_avg_pool1d", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), len = draw(rng, 1, 6), c = draw(rng, 1, 4);
    Tensor x = random_tensor({n, len, c}, rng), w = random_tensor({n, c}, rng);
    return projected_check({{"x", x}}, w, [&](Graph& g) { return global_avg_pool1d(g, x); }, eps);
  });
  trials.emplace_back("batchnorm1d", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), len = draw(rng, 2, 6), c = draw(rng, 1, 4);
    Tensor x = random_tensor({n, len, c}, rng), gamma = random_tensor({c}, rng, 0.5, 1.5),
           beta = random_tensor({c}, rng), w = random_tensor({n, len, c}, rng);
    Tensor rm = Tensor::zeros({c}), rv = Tensor::filled({c}, 1.0);
    double worst = 0.0;
    for (bool training : {true, false}) {
      BatchNormOptions opt;
      opt.training = training;
      worst = std::max(worst, projected_check({{"x", x}, {"gamma", gamma}, {"beta", beta}}, w,
                                              [&](Graph& g) { return batchnorm1d(g, x, gamma, beta, rm, rv, opt); },
                                              eps));
    }
    return worst;
  });
  trials.emplace_back("lstm_cell", [](std::mt19937_64& rng, double eps) {
    std::size_t n = draw(rng, 1, 3), h = draw(rng, 1, 4);
    Tensor gates = random_tensor({n, 4 * h}, rng), hp = random_tensor({n, h}, rng),
           cp = random_tensor({n, h}, rng), u = random_tensor({h, 4 * h}, rng);
    Tensor wh = random_tensor({n, h}, rng), wc = random_tensor({n, h}, rng);
    GradCheckOptions opt;
    opt.eps = eps;
    auto r = check_gradients(
        [&](Graph& g) {
          auto s = lstm_cell(g, gates, hp, cp, u);
          return add(g, dot(g, s.h, wh), dot(g, s.c, wc));
        },
        {{"input_gates", gates}, {"h_prev", hp}, {"c_prev", cp}, {"w_hidden", u}}, opt);
    double worst = 0.0;
    for (const auto& e : r) worst = std::max(worst, e.max_error);
    return worst;
  });
  return trials;
}

}  // namespace detail

/// Runs every primitive's finite-difference check over `trials` random shapes.
inline std::vector<PrimitiveCheck> check_primitives(std::size_t trials = 50, std::uint64_t seed = 1,
                                                    double eps = 1e-6) {
  std::vector<PrimitiveCheck> out;
  for (auto& [name, trial] : detail::primitive_trials()) {
    std::mt19937_64 rng(seed);
    PrimitiveCheck res{name, 0.0, trials};
    for (std::size_t t = 0; t < trials; ++t) res.max_error = std::max(res.max_error, trial(rng, eps));
    out.push_back(res);
  }
  return out;
}

}  // namespace tforge::diff
