#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tripletforge/diff/graph.hpp"
#include "tripletforge/diff/tensor.hpp"

// Differentiable primitives. Every op validates shapes, rejects NaN inputs, and
// tapes a backward rule when any input requires a gradient. Layouts are
// row-major; sequences are (batch, time, channels).

namespace tforge::diff {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline MatrixMap as_matrix(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMatrixMap as_matrix(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void reject_nan(std::string_view op, const Tensor& t) {
  for (double v : t.values()) {
    if (std::isnan(v)) throw NumericalError(std::string(op) + ": NaN in input");
  }
}

[[noreturn]] inline void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

inline void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
  }
}

inline bool any_tracks(const Graph& g, std::span<const Tensor> ts) {
  if (!g.recording()) return false;
  for (const auto& t : ts) {
    if (t.requires_grad()) return true;
  }
  return false;
}

template <class Forward, class Derivative>
Tensor unary(Graph& g, std::string_view op, const Tensor& x, Forward fwd, Derivative dydx) {
  reject_nan(op, x);
  auto xv = x.values();
  Buffer out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor y(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record(std::string(op), {y}, [x, y, dydx]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      auto xv = x.values();
      auto yv = y.values();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dydx(xv[i], yv[i]);
    });
  }
  return y;
}

inline double softplus_value(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor relu(Graph& g, const Tensor& x) {
  return detail::unary(
      g, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(Graph& g, const Tensor& x) {
  return detail::unary(
      g, "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(Graph& g, const Tensor& x) {
  return detail::unary(g, "sigmoid", x, detail::sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(Graph& g, const Tensor& x) {
  return detail::unary(
      g, "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(Graph& g, const Tensor& x) {
  for (double v : x.values()) {
    if (v <= 0.0) throw NumericalError("log: non-positive input " + std::to_string(v));
  }
  return detail::unary(
      g, "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(Graph& g, const Tensor& x) {
  return detail::unary(g, "softplus", x, detail::softplus_value,
                       [](double v, double) { return detail::sigmoid_value(v); });
}

inline Tensor scale(Graph& g, const Tensor& x, double factor) {
  return detail::unary(
      g, "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

inline Tensor add_scalar(Graph& g, const Tensor& x, double c) {
  return detail::unary(
      g, "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

namespace detail {

template <class Forward, class Backward>
Tensor binary(Graph& g, std::string_view op, const Tensor& a, const Tensor& b, Forward fwd,
              Backward bwd) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
  reject_nan(op, a);
  reject_nan(op, b);
  auto av = a.values();
  auto bv = b.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  Tensor y(a.shape(), std::move(out));
  if (g.tracks({&a, &b})) {
    g.record(std::string(op), {y}, [a, b, y, bwd]() mutable { bwd(a, b, y); });
  }
  return y;
}

}  // namespace detail

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary(
      g, "add", a, b, [](double x, double y) { return x + y; },
      [](const Tensor& a, const Tensor& b, const Tensor& y) {
        auto gy = y.grad();
        if (a.requires_grad()) {
          auto ga = a.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
        }
      });
}

inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary(
      g, "sub", a, b, [](double x, double y) { return x - y; },
      [](const Tensor& a, const Tensor& b, const Tensor& y) {
        auto gy = y.grad();
        if (a.requires_grad()) {
          auto ga = a.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
        }
      });
}

inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary(
      g, "mul", a, b, [](double x, double y) { return x * y; },
      [](const Tensor& a, const Tensor& b, const Tensor& y) {
        auto gy = y.grad();
        auto av = a.values();
        auto bv = b.values();
        if (a.requires_grad()) {
          auto ga = a.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
        }
      });
}

/// x + bias, with bias broadcast along the last axis of x.
inline Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    detail::shape_mismatch("add_bias", x.shape(), bias.shape());
  }
  detail::reject_nan("add_bias", x);
  detail::reject_nan("add_bias", bias);
  const std::size_t f = bias.dim(0);
  const std::size_t rows = x.size() / f;
  Buffer out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) out[r * f + j] += bv[j];
  }
  Tensor y(x.shape(), std::move(out));
  if (g.tracks({&x, &bias})) {
    g.record("add_bias", {y}, [x, bias, y, f, rows]() mutable {
      auto gy = y.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < f; ++j) gb[j] += gy[r * f + j];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(Graph& g, const Tensor& x) {
  detail::reject_nan("sum", x);
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = Tensor::scalar(s);
  if (g.tracks({&x})) {
    g.record("sum", {y}, [x, y]() mutable {
      double gy = y.grad()[0];
      for (auto& v : x.grad()) v += gy;
    });
  }
  return y;
}

inline Tensor mean(Graph& g, const Tensor& x) {
  detail::reject_nan("mean", x);
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.size());
  Tensor y = Tensor::scalar(s / n);
  if (g.tracks({&x})) {
    g.record("mean", {y}, [x, y, n]() mutable {
      double gy = y.grad()[0] / n;
      for (auto& v : x.grad()) v += gy;
    });
  }
  return y;
}

/// Full inner product of two same-shaped tensors, as a scalar.
inline Tensor dot(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("dot", a.shape(), b.shape());
  detail::reject_nan("dot", a);
  detail::reject_nan("dot", b);
  double s = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  Tensor y = Tensor::scalar(s);
  if (g.tracks({&a, &b})) {
    g.record("dot", {y}, [a, b, y]() mutable {
      double gy = y.grad()[0];
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy * av[i];
      }
    });
  }
  return y;
}

/// Row-wise inner products of two (N, D) tensors, giving (N).
inline Tensor rowwise_dot(Graph& g, const Tensor& a, const Tensor& b) {
  detail::require_rank("rowwise_dot", a, 2);
  if (a.shape() != b.shape()) detail::shape_mismatch("rowwise_dot", a.shape(), b.shape());
  detail::reject_nan("rowwise_dot", a);
  detail::reject_nan("rowwise_dot", b);
  const std::size_t n = a.dim(0), d = a.dim(1);
  Buffer out(n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += av[i * d + j] * bv[i * d + j];
    out[i] = s;
  }
  Tensor y({n}, std::move(out));
  if (g.tracks({&a, &b})) {
    g.record("rowwise_dot", {y}, [a, b, y, n, d]() mutable {
      auto gy = y.grad();
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += gy[i] * bv[i * d + j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[i * d + j] += gy[i] * av[i * d + j];
      }
    });
  }
  return y;
}

/// Euclidean norm of each row of an (N, D) tensor, giving (N).
inline Tensor l2norm(Graph& g, const Tensor& x) {
  detail::require_rank("l2norm", x, 2);
  detail::reject_nan("l2norm", x);
  const std::size_t n = x.dim(0), d = x.dim(1);
  Buffer out(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
    out[i] = std::sqrt(s);
  }
  Tensor y({n}, std::move(out));
  if (g.tracks({&x})) {
    g.record("l2norm", {y}, [x, y, n, d]() mutable {
      auto gy = y.grad();
      auto yv = y.values();
      auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (yv[i] == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += gy[i] * xv[i * d + j] / yv[i];
      }
    });
  }
  return y;
}

/// Divides each row of an (N, D) tensor by max(||row||, eps).
inline Tensor normalize_rows(Graph& g, const Tensor& x, double eps = 1e-12) {
  detail::require_rank("normalize_rows", x, 2);
  detail::reject_nan("normalize_rows", x);
  const std::size_t n = x.dim(0), d = x.dim(1);
  Buffer out(x.size());
  Buffer denom(n);
  std::vector<char> clamped(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
    double norm = std::sqrt(s);
    clamped[i] = norm <= eps;
    denom[i] = clamped[i] ? eps : norm;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] / denom[i];
  }
  Tensor y(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record("normalize_rows", {y}, [x, y, n, d, denom, clamped]() mutable {
      auto gy = y.grad();
      auto yv = y.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        double proj = 0.0;
        if (!clamped[i]) {
          for (std::size_t j = 0; j < d; ++j) proj += yv[i * d + j] * gy[i * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          gx[i * d + j] += (gy[i * d + j] - yv[i * d + j] * proj) / denom[i];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra and indexing

/// (M, K) x (K, N) -> (M, N).
inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    detail::shape_mismatch("matmul", a.shape(), b.shape());
  }
  detail::reject_nan("matmul", a);
  detail::reject_nan("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y = Tensor::zeros({m, n});
  detail::as_matrix(y.values(), m, n).noalias() =
      detail::as_matrix(a.values(), m, k) * detail::as_matrix(b.values(), k, n);
  if (g.tracks({&a, &b})) {
    g.record("matmul", {y}, [a, b, y, m, k, n]() mutable {
      auto gy = detail::as_matrix(std::span<const double>(y.grad()), m, n);
      if (a.requires_grad()) {
        detail::as_matrix(a.grad(), m, k).noalias() +=
            gy * detail::as_matrix(std::as_const(b).values(), k, n).transpose();
      }
      if (b.requires_grad()) {
        detail::as_matrix(b.grad(), k, n).noalias() +=
            detail::as_matrix(std::as_const(a).values(), m, k).transpose() * gy;
      }
    });
  }
  return y;
}

/// Same data, new shape (element count must match).
inline Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) detail::shape_mismatch("reshape", x.shape(), shape);
  Tensor y(std::move(shape), Buffer(x.values().begin(), x.values().end()));
  if (g.tracks({&x})) {
    g.record("reshape", {y}, [x, y]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

/// Picks rows of an (N, D) tensor; indices may repeat.
inline Tensor gather_rows(Graph& g, const Tensor& x, std::vector<std::size_t> indices) {
  detail::require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  for (auto i : indices) {
    if (i >= n) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                                 to_string(x.shape()));
  }
  detail::reject_nan("gather_rows", x);
  Buffer out(indices.size() * d);
  auto xv = x.values();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Tensor y({indices.size(), d}, std::move(out));
  if (g.tracks({&x})) {
    g.record("gather_rows", {y}, [x, y, d, indices = std::move(indices)]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t r = 0; r < indices.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) gx[indices[r] * d + j] += gy[r * d + j];
      }
    });
  }
  return y;
}

/// Concatenates along the last axis; leading extents must agree.
inline Tensor concat_last(Graph& g, const Tensor& a, const Tensor& b) {
  Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b) detail::shape_mismatch("concat_last", a.shape(), b.shape());
  detail::reject_nan("concat_last", a);
  detail::reject_nan("concat_last", b);
  const std::size_t fa = a.shape().back(), fb = b.shape().back(), rows = numel(lead_a);
  Shape out_shape = lead_a;
  out_shape.push_back(fa + fb);
  Buffer out(rows * (fa + fb));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * fa), fa,
                out.begin() + static_cast<std::ptrdiff_t>(r * (fa + fb)));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(r * fb), fb,
                out.begin() + static_cast<std::ptrdiff_t>(r * (fa + fb) + fa));
  }
  Tensor y(std::move(out_shape), std::move(out));
  if (g.tracks({&a, &b})) {
    g.record("concat_last", {y}, [a, b, y, fa, fb, rows]() mutable {
      auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < fa; ++j) ga[r * fa + j] += gy[r * (fa + fb) + j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < fb; ++j) gb[r * fb + j] += gy[r * (fa + fb) + fa + j];
      }
    });
  }
  return y;
}

/// (N, T, F) -> (N, F) at time step t.
inline Tensor select_step(Graph& g, const Tensor& x, std::size_t t) {
  detail::require_rank("select_step", x, 3);
  const std::size_t n = x.dim(0), steps = x.dim(1), f = x.dim(2);
  if (t >= steps) throw ShapeError("select_step: step " + std::to_string(t) + " out of range for " +
                                   to_string(x.shape()));
  Buffer out(n * f);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((i * steps + t) * f), f,
                out.begin() + static_cast<std::ptrdiff_t>(i * f));
  }
  Tensor y({n, f}, std::move(out));
  if (g.tracks({&x})) {
    g.record("select_step", {y}, [x, y, n, steps, f, t]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) gx[(i * steps + t) * f + j] += gy[i * f + j];
    });
  }
  return y;
}

/// Stacks T tensors of shape (N, F) into (N, T, F).
inline Tensor stack_steps(Graph& g, const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ShapeError("stack_steps: no steps");
  const Shape& s0 = steps.front().shape();
  if (s0.size() != 2) throw ShapeError("stack_steps: steps must be (N, F), got " + to_string(s0));
  for (const auto& s : steps) {
    if (s.shape() != s0) detail::shape_mismatch("stack_steps", s0, s.shape());
  }
  const std::size_t n = s0[0], f = s0[1], count = steps.size();
  Buffer out(n * count * f);
  for (std::size_t t = 0; t < count; ++t) {
    auto sv = steps[t].values();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(sv.begin() + static_cast<std::ptrdiff_t>(i * f), f,
                  out.begin() + static_cast<std::ptrdiff_t>((i * count + t) * f));
    }
  }
  Tensor y({n, count, f}, std::move(out));
  if (detail::any_tracks(g, steps)) {
    g.record("stack_steps", {y}, [steps, y, n, f, count]() mutable {
      auto gy = y.grad();
      for (std::size_t t = 0; t < count; ++t) {
        if (!steps[t].requires_grad()) continue;
        auto gs = steps[t].grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < f; ++j) gs[i * f + j] += gy[(i * count + t) * f + j];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Classification

/// Row-wise softmax over the last axis of an (N, K) tensor.
inline Tensor softmax(Graph& g, const Tensor& x) {
  detail::require_rank("softmax", x, 2);
  detail::reject_nan("softmax", x);
  const std::size_t n = x.dim(0), k = x.dim(1);
  Buffer out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = xv[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xv[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (out[i * k + j] = std::exp(xv[i * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= s;
  }
  Tensor y(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record("softmax", {y}, [x, y, n, k]() mutable {
      auto gy = y.grad();
      auto yv = y.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += gy[i * k + j] * yv[i * k + j];
        for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += yv[i * k + j] * (gy[i * k + j] - s);
      }
    });
  }
  return y;
}

/// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
inline Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels) {
  detail::require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     to_string(logits.shape()) + " logits");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(k - 1) + "]");
    }
  }
  detail::reject_nan("softmax_cross_entropy", logits);
  auto xv = logits.values();
  Buffer probs(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = xv[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xv[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (probs[i * k + j] = std::exp(xv[i * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= s;
    total += mx + std::log(s) - xv[i * k + static_cast<std::size_t>(labels[i])];
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(n));
  if (g.tracks({&logits})) {
    std::vector<int> owned(labels.begin(), labels.end());
    g.record("softmax_cross_entropy", {y},
             [logits, y, n, k, probs = std::move(probs), owned = std::move(owned)]() mutable {
               double gy = y.grad()[0] / static_cast<double>(n);
               auto gx = logits.grad();
               for (std::size_t i = 0; i < n; ++i) {
                 for (std::size_t j = 0; j < k; ++j) {
                   double target = static_cast<int>(j) == owned[i] ? 1.0 : 0.0;
                   gx[i * k + j] += gy * (probs[i * k + j] - target);
                 }
               }
             });
  }
  return y;
}

/// Inverted dropout: keeps each element with probability keep_prob and divides
/// kept values by keep_prob.
inline Tensor dropout_mask(Graph& g, const Tensor& x, double keep_prob, std::mt19937_64& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ConfigError("dropout_mask: keep probability must be in (0, 1], got " +
                      std::to_string(keep_prob));
  }
  detail::reject_nan("dropout_mask", x);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Buffer mask(x.size());
  for (auto& m : mask) m = unif(rng) < keep_prob ? 1.0 / keep_prob : 0.0;
  Buffer out(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  Tensor y(x.shape(), std::move(out));
  if (g.tracks({&x})) {
    g.record("dropout_mask", {y}, [x, y, mask = std::move(mask)]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Sequence layers

/// Stride-1 convolution over (N, L, C) with "same" zero padding.
///
/// weight is (K*C, F) with row index k*C + c; bias is (F). For even K the
/// extra padding element goes on the right, so the output keeps length L.
inline Tensor conv1d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank("conv1d", x, 3);
  detail::require_rank("conv1d", weight, 2);
  const std::size_t n = x.dim(0), len = x.dim(1), c = x.dim(2);
  const std::size_t f = weight.dim(1);
  if (weight.dim(0) % c != 0) detail::shape_mismatch("conv1d", x.shape(), weight.shape());
  if (bias.rank() != 1 || bias.dim(0) != f) detail::shape_mismatch("conv1d", weight.shape(), bias.shape());
  detail::reject_nan("conv1d", x);
  detail::reject_nan("conv1d", weight);
  detail::reject_nan("conv1d", bias);
  const std::size_t k = weight.dim(0) / c;
  const std::ptrdiff_t pad_left = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t rows = n * len, width = k * c;

  auto cols = std::make_shared<Buffer>(rows * width, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      double* dst = cols->data() + (i * len + t) * width;
      for (std::size_t kk = 0; kk < k; ++kk) {
        std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + kk) - pad_left;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        std::copy_n(xv.data() + (i * len + static_cast<std::size_t>(src)) * c, c, dst + kk * c);
      }
    }
  }
  Tensor y = Tensor::zeros({n, len, f});
  auto ym = detail::as_matrix(y.values(), rows, f);
  ym.noalias() = detail::as_matrix(std::span<const double>(*cols), rows, width) *
                 detail::as_matrix(weight.values(), width, f);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), static_cast<Eigen::Index>(f));

  if (g.tracks({&x, &weight, &bias})) {
    g.record("conv1d", {y}, [=]() mutable {
      auto gy = detail::as_matrix(std::span<const double>(y.grad()), rows, f);
      auto colm = detail::as_matrix(std::span<const double>(*cols), rows, width);
      if (weight.requires_grad()) {
        detail::as_matrix(weight.grad(), width, f).noalias() += colm.transpose() * gy;
      }
      if (bias.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd>(bias.grad().data(), static_cast<Eigen::Index>(f)) +=
            gy.colwise().sum();
      }
      if (x.requires_grad()) {
        detail::RowMatrix dcols =
            gy * detail::as_matrix(std::as_const(weight).values(), width, f).transpose();
        auto gx = x.grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t t = 0; t < len; ++t) {
            const double* src_row = dcols.data() + (i * len + t) * width;
            for (std::size_t kk = 0; kk < k; ++kk) {
              std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + kk) - pad_left;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              double* dst = gx.data() + (i * len + static_cast<std::size_t>(src)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src_row[kk * c + ch];
            }
          }
        }
      }
    });
  }
  return y;
}

/// Max pooling over time of (N, L, C); trailing samples that do not fill a
/// window are dropped. Ties resolve to the earliest element.
inline Tensor maxpool1d(Graph& g, const Tensor& x, std::size_t pool, std::size_t stride) {
  detail::require_rank("maxpool1d", x, 3);
  if (pool == 0 || stride == 0) throw ConfigError("maxpool1d: pool and stride must be positive");
  const std::size_t n = x.dim(0), len = x.dim(1), c = x.dim(2);
  if (len < pool) {
    throw ShapeError("maxpool1d: sequence length " + std::to_string(len) + " shorter than pool " +
                     std::to_string(pool) + " for input " + to_string(x.shape()));
  }
  detail::reject_nan("maxpool1d", x);
  const std::size_t out_len = (len - pool) / stride + 1;
  Buffer out(n * out_len * c);
  std::vector<std::uint32_t> argmax(out.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (i * len + t * stride) * c + ch;
        for (std::size_t p = 1; p < pool; ++p) {
          std::size_t idx = (i * len + t * stride + p) * c + ch;
          if (xv[idx] > xv[best]) best = idx;
        }
        out[(i * out_len + t) * c + ch] = xv[best];
        argmax[(i * out_len + t) * c + ch] = static_cast<std::uint32_t>(best);
      }
    }
  }
  Tensor y({n, out_len, c}, std::move(out));
  if (g.tracks({&x})) {
    g.record("maxpool1d", {y}, [x, y, argmax = std::move(argmax)]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
    });
  }
  return y;
}

/// Mean over the time axis: (N, L, C) -> (N, C).
inline Tensor global_avg_pool1d(Graph& g, const Tensor& x) {
  detail::require_rank("global_avg_pool1d", x, 3);
  detail::reject_nan("global_avg_pool1d", x);
  const std::size_t n = x.dim(0), len = x.dim(1), c = x.dim(2);
  Buffer out(n * c, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += xv[(i * len + t) * c + ch];
  for (auto& v : out) v /= static_cast<double>(len);
  Tensor y({n, c}, std::move(out));
  if (g.tracks({&x})) {
    g.record("global_avg_pool1d", {y}, [x, y, n, len, c]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      const double inv = 1.0 / static_cast<double>(len);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t ch = 0; ch < c; ++ch) gx[(i * len + t) * c + ch] += gy[i * c + ch] * inv;
    });
  }
  return y;
}

/// Per-channel mean and (biased) variance over every axis but the last.
struct ChannelMoments {
  Buffer mean;
  Buffer var;
};

inline ChannelMoments channel_moments(const Tensor& x) {
  const std::size_t c = x.shape().back();
  const std::size_t m = x.size() / c;
  auto xv = x.values();
  ChannelMoments out{Buffer(c, 0.0), Buffer(c, 0.0)};
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) out.mean[ch] += xv[r * c + ch];
  for (auto& v : out.mean) v /= static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double d = xv[r * c + ch] - out.mean[ch];
      out.var[ch] += d * d;
    }
  for (auto& v : out.var) v /= static_cast<double>(m);
  return out;
}

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.9;
  double eps = 1e-5;
  // Training-mode statistics of a larger batch this input is a slice of. They
  // are treated as constants and the running averages are left untouched.
  const ChannelMoments* batch_moments = nullptr;
};

inline void update_running_moments(Tensor& running_mean, Tensor& running_var, const ChannelMoments& m,
                                   double momentum) {
  auto rm = running_mean.values();
  auto rv = running_var.values();
  for (std::size_t ch = 0; ch < rm.size(); ++ch) {
    rm[ch] = momentum * rm[ch] + (1.0 - momentum) * m.mean[ch];
    rv[ch] = momentum * rv[ch] + (1.0 - momentum) * m.var[ch];
  }
}

/// Per-channel normalization over every axis but the last.
///
/// In training mode the batch statistics are used and the running averages are
/// updated in place (running = momentum * running + (1 - momentum) * batch);
/// otherwise the running averages are used.
inline Tensor batchnorm1d(Graph& g, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          Tensor& running_mean, Tensor& running_var, const BatchNormOptions& opt) {
  const std::size_t c = x.shape().back();
  for (const Tensor* p : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (p->rank() != 1 || p->dim(0) != c) detail::shape_mismatch("batchnorm1d", x.shape(), p->shape());
  }
  detail::reject_nan("batchnorm1d", x);
  detail::reject_nan("batchnorm1d", gamma);
  detail::reject_nan("batchnorm1d", beta);
  const std::size_t m = x.size() / c;
  auto xv = x.values();
  Buffer mu(c, 0.0), var(c, 0.0);
  if (opt.training && opt.batch_moments != nullptr) {
    if (opt.batch_moments->mean.size() != c || opt.batch_moments->var.size() != c) {
      throw ShapeError("batchnorm1d: batch moments have the wrong channel count");
    }
    mu = opt.batch_moments->mean;
    var = opt.batch_moments->var;
  } else if (opt.training) {
    auto moments = channel_moments(x);
    mu = std::move(moments.mean);
    var = std::move(moments.var);
    update_running_moments(running_mean, running_var, {mu, var}, opt.momentum);
  } else {
    std::copy(running_mean.values().begin(), running_mean.values().end(), mu.begin());
    std::copy(running_var.values().begin(), running_var.values().end(), var.begin());
  }
  Buffer inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + opt.eps);

  Buffer xhat(x.size()), out(x.size());
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t i = r * c + ch;
      xhat[i] = (xv[i] - mu[ch]) * inv_std[ch];
      out[i] = gv[ch] * xhat[i] + bv[ch];
    }
  Tensor y(x.shape(), std::move(out));
  if (g.tracks({&x, &gamma, &beta})) {
    const bool training = opt.training && opt.batch_moments == nullptr;
    g.record("batchnorm1d", {y},
             [x, gamma, beta, y, m, c, training, inv_std = std::move(inv_std),
              xhat = std::move(xhat)]() mutable {
               auto gy = y.grad();
               auto gv = gamma.values();
               Buffer sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
               for (std::size_t r = 0; r < m; ++r)
                 for (std::size_t ch = 0; ch < c; ++ch) {
                   sum_dy[ch] += gy[r * c + ch];
                   sum_dy_xhat[ch] += gy[r * c + ch] * xhat[r * c + ch];
                 }
               if (gamma.requires_grad()) {
                 auto gg = gamma.grad();
                 for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_dy_xhat[ch];
               }
               if (beta.requires_grad()) {
                 auto gb = beta.grad();
                 for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[ch];
               }
               if (!x.requires_grad()) return;
               auto gx = x.grad();
               const double md = static_cast<double>(m);
               for (std::size_t r = 0; r < m; ++r)
                 for (std::size_t ch = 0; ch < c; ++ch) {
                   std::size_t i = r * c + ch;
                   if (training) {
                     gx[i] += gv[ch] * inv_std[ch] / md *
                              (md * gy[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                   } else {
                     gx[i] += gy[i] * gv[ch] * inv_std[ch];
                   }
                 }
             });
  }
  return y;
}

struct LstmState {
  Tensor h;
  Tensor c;
};

/// One LSTM step with gate order (input, forget, cell, output).
///
/// input_gates is the precomputed x_t W + b, shape (N, 4H); h_prev and c_prev
/// are (N, H); w_hidden is (H, 4H).
inline LstmState lstm_cell(Graph& g, const Tensor& input_gates, const Tensor& h_prev,
                           const Tensor& c_prev, const Tensor& w_hidden) {
  detail::require_rank("lstm_cell", input_gates, 2);
  const std::size_t n = h_prev.dim(0), hd = h_prev.dim(1);
  if (input_gates.dim(0) != n || input_gates.dim(1) != 4 * hd) {
    detail::shape_mismatch("lstm_cell", input_gates.shape(), h_prev.shape());
  }
  if (c_prev.shape() != h_prev.shape()) detail::shape_mismatch("lstm_cell", c_prev.shape(), h_prev.shape());
  if (w_hidden.rank() != 2 || w_hidden.dim(0) != hd || w_hidden.dim(1) != 4 * hd) {
    detail::shape_mismatch("lstm_cell", w_hidden.shape(), h_prev.shape());
  }
  detail::reject_nan("lstm_cell", input_gates);
  detail::reject_nan("lstm_cell", h_prev);
  detail::reject_nan("lstm_cell", c_prev);

  const std::size_t g4 = 4 * hd;
  // A constant all-zero previous state (the initial one) contributes nothing.
  const auto hv = h_prev.values();
  const bool zero_h = !h_prev.requires_grad() && std::all_of(hv.begin(), hv.end(), [](double v) { return v == 0.0; });
  Buffer act(n * g4);  // activated gates i, f, g, o
  {
    auto am = detail::as_matrix(std::span<double>(act), n, g4);
    am = detail::as_matrix(input_gates.values(), n, g4);
    if (!zero_h) {
      am.noalias() += detail::as_matrix(h_prev.values(), n, hd) * detail::as_matrix(w_hidden.values(), hd, g4);
    }
  }
  Buffer h(n * hd), c(n * hd), tanh_c(n * hd);
  auto cp = c_prev.values();
  for (std::size_t i = 0; i < n; ++i) {
    double* a = act.data() + i * g4;
    for (std::size_t j = 0; j < hd; ++j) {
      a[j] = detail::sigmoid_value(a[j]);
      a[hd + j] = detail::sigmoid_value(a[hd + j]);
      a[2 * hd + j] = std::tanh(a[2 * hd + j]);
      a[3 * hd + j] = detail::sigmoid_value(a[3 * hd + j]);
      std::size_t s = i * hd + j;
      c[s] = a[hd + j] * cp[s] + a[j] * a[2 * hd + j];
      tanh_c[s] = std::tanh(c[s]);
      h[s] = a[3 * hd + j] * tanh_c[s];
    }
  }
  LstmState next{Tensor({n, hd}, std::move(h)), Tensor({n, hd}, std::move(c))};
  if (g.tracks({&input_gates, &h_prev, &c_prev, &w_hidden})) {
    Tensor h_out = next.h, c_out = next.c;
    g.record("lstm_cell", {h_out, c_out},
             [=, act = std::move(act), tanh_c = std::move(tanh_c)]() mutable {
               auto gh = h_out.grad();
               auto gc = c_out.grad();
               auto cpv = c_prev.values();
               detail::RowMatrix dgates(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g4));
               Buffer dc_prev(n * hd);
               for (std::size_t i = 0; i < n; ++i) {
                 const double* a = act.data() + i * g4;
                 double* d = dgates.data() + i * g4;
                 for (std::size_t j = 0; j < hd; ++j) {
                   std::size_t s = i * hd + j;
                   double ig = a[j], fg = a[hd + j], cg = a[2 * hd + j], og = a[3 * hd + j];
                   double dc = gc[s] + gh[s] * og * (1.0 - tanh_c[s] * tanh_c[s]);
                   d[j] = dc * cg * ig * (1.0 - ig);
                   d[hd + j] = dc * cpv[s] * fg * (1.0 - fg);
                   d[2 * hd + j] = dc * ig * (1.0 - cg * cg);
                   d[3 * hd + j] = gh[s] * tanh_c[s] * og * (1.0 - og);
                   dc_prev[s] = dc * fg;
                 }
               }
               if (input_gates.requires_grad()) {
                 detail::as_matrix(input_gates.grad(), n, g4) += dgates;
               }
               if (h_prev.requires_grad()) {
                 detail::as_matrix(h_prev.grad(), n, hd).noalias() +=
                     dgates * detail::as_matrix(std::as_const(w_hidden).values(), hd, g4).transpose();
               }
               if (c_prev.requires_grad()) {
                 auto gcp = c_prev.grad();
                 for (std::size_t s = 0; s < gcp.size(); ++s) gcp[s] += dc_prev[s];
               }
               if (w_hidden.requires_grad() && !zero_h) {
                 detail::as_matrix(w_hidden.grad(), hd, g4).noalias() +=
                     detail::as_matrix(std::as_const(h_prev).values(), n, hd).transpose() * dgates;
               }
             });
  }
  return next;
}

}  // namespace tforge::diff
