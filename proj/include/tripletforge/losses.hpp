#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tripletforge/diff/ops.hpp"
#include "tripletforge/error.hpp"
#include "tripletforge/mining.hpp"

namespace tforge::losses {

using diff::Graph;
using diff::Tensor;

enum class Variant { NPair, L2Margin, CosineMargin, CrossEntropyOnly };
enum class Aggregation { Mean, Sum };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::NPair: return "npair";
    case Variant::L2Margin: return "l2margin";
    case Variant::CosineMargin: return "cosmargin";
    case Variant::CrossEntropyOnly: return "ce";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  if (name == "npair") return Variant::NPair;
  if (name == "l2margin") return Variant::L2Margin;
  if (name == "cosmargin") return Variant::CosineMargin;
  if (name == "ce") return Variant::CrossEntropyOnly;
  throw ConfigError("unknown loss '" + std::string(name) + "' (ce|npair|l2margin|cosmargin)");
}

inline std::string_view to_string(Aggregation a) { return a == Aggregation::Mean ? "mean" : "sum"; }

inline Aggregation parse_aggregation(std::string_view name) {
  if (name == "mean") return Aggregation::Mean;
  if (name == "sum") return Aggregation::Sum;
  throw ConfigError("unknown aggregation '" + std::string(name) + "' (mean|sum)");
}

struct LossConfig {
  Variant variant = Variant::NPair;
  double tau = 0.2;
  double alpha_l2 = 0.2;
  double alpha_cos = 0.1;
  Aggregation aggregation = Aggregation::Mean;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be > 0, got " + std::to_string(tau));
    if (!(alpha_l2 >= 0.0)) throw ConfigError("alpha_l2 must be >= 0");
    if (!(alpha_cos >= 0.0)) throw ConfigError("alpha_cos must be >= 0");
  }
};

struct LossBreakdown {
  double total = 0.0;
  double triplet_term = 0.0;
  double ce_term = 0.0;
  std::size_t triplet_count = 0;
};

/// log(1 + e^x) without overflow for large x.
inline double log1p_exp(double x) { return diff::detail::softplus_value(x); }

inline double npair_term(double s_ap, double s_an, double tau) { return log1p_exp((s_an - s_ap) / tau); }
inline double l2_margin_term(double d_ap, double d_an, double alpha) { return log1p_exp(d_ap - d_an + alpha); }
inline double cosine_margin_term(double s_ap, double s_an, double alpha) {
  return log1p_exp(s_an - s_ap + alpha);
}

inline Tensor normalize_unit(Graph& g, const Tensor& raw) { return diff::normalize_rows(g, raw, 1e-12); }

namespace detail {

enum class Pairing { Dot, SquaredDistance };

// Aggregate of softplus(sign * (f(a,n) - f(a,p)) * scale + offset) over triples,
// fused so that no per-triple embedding copies are materialized.
inline Tensor fused_triplet(Graph& g, std::string_view op, const mining::TripletSet& set, const Tensor& unit,
                            Pairing pairing, double sign, double scale, double offset, Aggregation agg) {
  diff::detail::require_rank(op, unit, 2);
  diff::detail::reject_nan(op, unit);
  const std::size_t n = unit.dim(0), d = unit.dim(1), t_count = set.size();
  auto u = unit.values();
  auto pair_value = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    if (pairing == Pairing::Dot) {
      for (std::size_t k = 0; k < d; ++k) s += u[i * d + k] * u[j * d + k];
    } else {
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = u[i * d + k] - u[j * d + k];
        s += diff * diff;
      }
    }
    return s;
  };
  std::vector<double> args(t_count);
  double total = 0.0;
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto& tr = set.triples[t];
    if (tr.anchor >= n || tr.positive >= n || tr.negative >= n) {
      throw ShapeError(std::string(op) + ": triple index out of range for " + diff::to_string(unit.shape()));
    }
    args[t] = sign * (pair_value(tr.anchor, tr.negative) - pair_value(tr.anchor, tr.positive)) * scale + offset;
    total += log1p_exp(args[t]);
  }
  const double weight = agg == Aggregation::Mean ? 1.0 / static_cast<double>(t_count) : 1.0;
  Tensor y = Tensor::scalar(total * weight);
  if (g.tracks({&unit})) {
    g.record(std::string(op), {y}, [unit, y, set, args = std::move(args), pairing, sign, scale, weight, d]() mutable {
      auto gu = unit.grad();
      auto u = unit.values();
      const double gy = y.grad()[0] * weight;
      for (std::size_t t = 0; t < set.triples.size(); ++t) {
        const auto& tr = set.triples[t];
        // d loss / d f(a,n) = c, d loss / d f(a,p) = -c
        const double c = gy * diff::detail::sigmoid_value(args[t]) * sign * scale;
        const std::size_t a = tr.anchor * d, p = tr.positive * d, ng = tr.negative * d;
        for (std::size_t k = 0; k < d; ++k) {
          if (pairing == Pairing::Dot) {
            gu[a + k] += c * (u[ng + k] - u[p + k]);
            gu[ng + k] += c * u[a + k];
            gu[p + k] -= c * u[a + k];
          } else {
            const double dn = 2.0 * (u[a + k] - u[ng + k]), dp = 2.0 * (u[a + k] - u[p + k]);
            gu[a + k] += c * (dn - dp);
            gu[ng + k] -= c * dn;
            gu[p + k] += c * dp;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace detail

/// Mean (or sum) of log(1 + exp((s_an - s_ap) / tau)) over the triples, with
/// s the dot product of unit embeddings. Empty optional when there are no triples.
inline std::optional<Tensor> npair_triplet(Graph& g, const mining::TripletSet& set, const Tensor& unit, double tau,
                                           Aggregation agg = Aggregation::Mean) {
  if (!(tau > 0.0)) throw ConfigError("npair_triplet: tau must be > 0");
  if (set.empty()) return std::nullopt;
  return detail::fused_triplet(g, "npair_triplet", set, unit, detail::Pairing::Dot, 1.0, 1.0 / tau, 0.0, agg);
}

/// log(1 + exp(d_ap - d_an + alpha)) with d the squared Euclidean distance.
inline std::optional<Tensor> l2_margin_triplet(Graph& g, const mining::TripletSet& set, const Tensor& unit,
                                               double alpha, Aggregation agg = Aggregation::Mean) {
  if (set.empty()) return std::nullopt;
  return detail::fused_triplet(g, "l2_margin_triplet", set, unit, detail::Pairing::SquaredDistance, -1.0, 1.0,
                               alpha, agg);
}

/// log(1 + exp(s_an - s_ap + alpha)) with s the dot product.
inline std::optional<Tensor> cosine_margin_triplet(Graph& g, const mining::TripletSet& set, const Tensor& unit,
                                                   double alpha, Aggregation agg = Aggregation::Mean) {
  if (set.empty()) return std::nullopt;
  return detail::fused_triplet(g, "cosine_margin_triplet", set, unit, detail::Pairing::Dot, 1.0, 1.0, alpha, agg);
}

/// Batch mean of -log(probs[i, label_i]) for row-major (N, K) probabilities.
inline double cross_entropy(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
  if (classes == 0 || probs.size() != labels.size() * classes || labels.empty()) {
    throw ShapeError("cross_entropy: " + std::to_string(probs.size()) + " probabilities for " +
                     std::to_string(labels.size()) + " labels and " + std::to_string(classes) + " classes");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < classes; ++j) row += probs[i * classes + j];
    if (std::abs(row - 1.0) > 1e-6) throw ConfigError("cross_entropy: row " + std::to_string(i) + " sums to " + std::to_string(row));
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ConfigError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                        std::to_string(classes - 1) + "]");
    }
    total -= std::log(probs[i * classes + static_cast<std::size_t>(labels[i])]);
  }
  return total / static_cast<double>(labels.size());
}

/// Fused softmax + cross-entropy on classifier logits.
inline Tensor cross_entropy(Graph& g, const Tensor& logits, std::span<const int> labels) {
  return diff::softmax_cross_entropy(g, logits, labels);
}

inline std::optional<Tensor> triplet_loss(Graph& g, const mining::TripletSet& set, const Tensor& unit,
                                          const LossConfig& cfg) {
  switch (cfg.variant) {
    case Variant::NPair: return npair_triplet(g, set, unit, cfg.tau, cfg.aggregation);
    case Variant::L2Margin: return l2_margin_triplet(g, set, unit, cfg.alpha_l2, cfg.aggregation);
    case Variant::CosineMargin: return cosine_margin_triplet(g, set, unit, cfg.alpha_cos, cfg.aggregation);
    case Variant::CrossEntropyOnly: return std::nullopt;
  }
  return std::nullopt;
}

struct CombinedLoss {
  Tensor total;
  LossBreakdown breakdown;
};

/// Unweighted sum of the triplet term on unit embeddings and cross-entropy on
/// logits. The triplet term is zero for the CE-only variant or an empty set.
inline CombinedLoss combined_loss(Graph& g, const Tensor& unit, const mining::TripletSet& set, const Tensor& logits,
                                  std::span<const int> labels, const LossConfig& cfg) {
  cfg.validate();
  if (unit.rank() != 2 || logits.rank() != 2 || unit.dim(0) != logits.dim(0) || labels.size() != logits.dim(0)) {
    throw ShapeError("combined_loss: embeddings " + diff::to_string(unit.shape()) + ", logits " +
                     diff::to_string(logits.shape()) + ", " + std::to_string(labels.size()) + " labels");
  }
  Tensor ce = cross_entropy(g, logits, labels);
  CombinedLoss out{ce, {}};
  out.breakdown.ce_term = ce.item();
  if (auto trip = triplet_loss(g, set, unit, cfg)) {
    out.total = diff::add(g, *trip, ce);
    out.breakdown.triplet_term = trip->item();
    out.breakdown.triplet_count = set.size();
  }
  out.breakdown.total = out.total.item();
  return out;
}

}  // namespace tforge::losses
