#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tripletforge/error.hpp"

namespace tforge::mining {

enum class Strategy { Easy, Hard, Semihard, All };
enum class Space { Unit, Raw };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Easy: return "easy";
    case Strategy::Hard: return "hard";
    case Strategy::Semihard: return "semihard";
    case Strategy::All: return "all";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "easy") return Strategy::Easy;
  if (name == "hard") return Strategy::Hard;
  if (name == "semihard") return Strategy::Semihard;
  if (name == "all") return Strategy::All;
  throw ConfigError("unknown mining strategy '" + std::string(name) + "' (easy|hard|semihard|all)");
}

inline std::string_view to_string(Space s) { return s == Space::Unit ? "unit" : "raw"; }

inline Space parse_space(std::string_view name) {
  if (name == "unit") return Space::Unit;
  if (name == "raw") return Space::Raw;
  throw ConfigError("unknown mining space '" + std::string(name) + "' (unit|raw)");
}

struct MiningPolicy {
  Strategy positive = Strategy::Semihard;
  Strategy negative = Strategy::Hard;
  Space space = Space::Unit;
};

inline constexpr double kUnitEps = 1e-12;

/// Raw embeddings plus their row-normalized copies. Matrices are row-major N x dim.
struct EmbeddingBatch {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> raw;
  std::vector<double> unit;
  std::vector<int> labels;

  static EmbeddingBatch from_raw(std::vector<double> raw, std::vector<int> labels, std::size_t dim) {
    if (dim == 0 || raw.size() % dim != 0 || raw.size() / dim != labels.size()) {
      throw ShapeError("EmbeddingBatch: " + std::to_string(raw.size()) + " values, " +
                       std::to_string(labels.size()) + " labels, dim " + std::to_string(dim));
    }
    EmbeddingBatch b;
    b.n = labels.size();
    b.dim = dim;
    b.unit.resize(raw.size());
    for (std::size_t i = 0; i < b.n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += raw[i * dim + j] * raw[i * dim + j];
      const double denom = std::max(std::sqrt(s), kUnitEps);
      for (std::size_t j = 0; j < dim; ++j) b.unit[i * dim + j] = raw[i * dim + j] / denom;
    }
    b.raw = std::move(raw);
    b.labels = std::move(labels);
    return b;
  }

  const std::vector<double>& rows(Space space) const { return space == Space::Unit ? unit : raw; }
};

/// Symmetric N x N Euclidean distances with an exact zero diagonal.
class DistanceMatrix {
 public:
  DistanceMatrix(const EmbeddingBatch& batch, Space space) : n_(batch.n), d_(batch.n * batch.n, 0.0) {
    const auto& x = batch.rows(space);
    const std::size_t dim = batch.dim;
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i + 1; j < n_; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
          const double diff = x[i * dim + k] - x[j * dim + k];
          s += diff * diff;
        }
        d_[i * n_ + j] = d_[j * n_ + i] = std::sqrt(s);
      }
    }
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  const std::vector<double>& values() const { return d_; }

 private:
  std::size_t n_;
  std::vector<double> d_;
};

inline std::vector<double> pairwise_distances(const EmbeddingBatch& batch, Space space) {
  if (batch.n < 2) throw ConfigError("pairwise_distances: need at least 2 embeddings");
  return DistanceMatrix(batch, space).values();
}

/// Outcome of mining one side for one anchor. Empty means no candidate
/// exists; single-choice strategies yield one index, All yields the full set.
struct Selection {
  std::vector<std::size_t> indices;
  bool fallback = false;

  bool empty() const { return indices.empty(); }
};

namespace detail {

// Extremum over candidates passing `keep`; ties go to the lowest index.
template <class Keep>
std::optional<std::size_t> extremum(const DistanceMatrix& d, std::size_t anchor,
                                    const std::vector<std::size_t>& candidates, bool largest, Keep keep) {
  std::optional<std::size_t> best;
  for (auto c : candidates) {
    if (!keep(d(anchor, c))) continue;
    if (!best || (largest ? d(anchor, c) > d(anchor, *best) : d(anchor, c) < d(anchor, *best))) best = c;
  }
  return best;
}

inline std::vector<std::size_t> same_class(const std::vector<int>& labels, std::size_t anchor) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i != anchor && labels[i] == labels[anchor]) out.push_back(i);
  }
  return out;
}

inline std::vector<std::size_t> other_class(const std::vector<int>& labels, std::size_t anchor) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != labels[anchor]) out.push_back(i);
  }
  return out;
}

inline Selection select(const DistanceMatrix& d, std::size_t anchor, const std::vector<std::size_t>& candidates,
                        Strategy strategy, bool positive, std::optional<std::size_t> reference) {
  Selection sel;
  if (candidates.empty()) return sel;
  if (strategy == Strategy::All) {
    sel.indices = candidates;
    return sel;
  }
  auto any = [](double) { return true; };
  // Easy positive / hard negative are nearest; hard positive / easy negative are farthest.
  const bool hard_is_largest = positive;
  std::optional<std::size_t> pick;
  switch (strategy) {
    case Strategy::Easy:
      pick = extremum(d, anchor, candidates, !hard_is_largest, any);
      break;
    case Strategy::Hard:
      pick = extremum(d, anchor, candidates, hard_is_largest, any);
      break;
    case Strategy::Semihard: {
      if (!reference) {
        throw ConfigError(std::string("semihard ") + (positive ? "positive" : "negative") +
                          " mining needs a reference " + (positive ? "negative" : "positive"));
      }
      const double ref = d(anchor, *reference);
      if (positive) {
        pick = extremum(d, anchor, candidates, true, [ref](double v) { return v < ref; });
      } else {
        pick = extremum(d, anchor, candidates, false, [ref](double v) { return v > ref; });
      }
      if (!pick) {
        sel.fallback = true;
        pick = extremum(d, anchor, candidates, hard_is_largest, any);
      }
      break;
    }
    case Strategy::All:
      break;
  }
  sel.indices.push_back(*pick);
  return sel;
}

}  // namespace detail

/// Same-class selection for `anchor`. Semihard needs the already-chosen
/// negative and falls back to the hardest positive when no positive is
/// closer than it.
inline Selection mine_positive(const DistanceMatrix& d, const std::vector<int>& labels, std::size_t anchor,
                               Strategy strategy, std::optional<std::size_t> reference_negative = {}) {
  return detail::select(d, anchor, detail::same_class(labels, anchor), strategy, true, reference_negative);
}

/// Different-class selection for `anchor`. Semihard needs the already-chosen
/// positive and falls back to the hardest negative when no negative is
/// farther than it.
inline Selection mine_negative(const DistanceMatrix& d, const std::vector<int>& labels, std::size_t anchor,
                               Strategy strategy, std::optional<std::size_t> reference_positive = {}) {
  return detail::select(d, anchor, detail::other_class(labels, anchor), strategy, false, reference_positive);
}

struct Triplet {
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;
  bool fallback;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct AnchorRecord {
  enum class Status { Mined, NoPositive, NoNegative };
  std::size_t anchor = 0;
  Status status = Status::Mined;
  bool positive_fallback = false;
  bool negative_fallback = false;

  friend bool operator==(const AnchorRecord&, const AnchorRecord&) = default;
};

struct TripletSet {
  std::vector<Triplet> triples;
  std::vector<AnchorRecord> anchors;

  std::size_t size() const { return triples.size(); }
  bool empty() const { return triples.empty(); }
};

/// Mines triplets with every batch element as anchor once, in anchor order.
///
/// Resolution order: when exactly one side is Semihard the other side is
/// mined first and supplies the reference (once per element when it is All);
/// when both are Semihard the negative is mined first against the hardest
/// positive, then the positive against that negative. Anchors without a
/// positive or negative are skipped and recorded.
inline TripletSet build_triplets(const EmbeddingBatch& batch, const MiningPolicy& policy) {
  if (batch.n < 2) throw ConfigError("build_triplets: need at least 2 embeddings");
  const DistanceMatrix d(batch, policy.space);
  const auto& labels = batch.labels;
  const Strategy ps = policy.positive, ns = policy.negative;
  TripletSet out;
  out.anchors.reserve(batch.n);

  for (std::size_t a = 0; a < batch.n; ++a) {
    AnchorRecord rec{a, AnchorRecord::Status::Mined, false, false};
    auto positives = detail::same_class(labels, a);
    auto negatives = detail::other_class(labels, a);
    if (positives.empty()) {
      rec.status = AnchorRecord::Status::NoPositive;
      out.anchors.push_back(rec);
      continue;
    }
    if (negatives.empty()) {
      rec.status = AnchorRecord::Status::NoNegative;
      out.anchors.push_back(rec);
      continue;
    }
    auto emit = [&](std::size_t p, std::size_t n, bool fb) { out.triples.push_back({a, p, n, fb}); };

    if (ps == Strategy::Semihard && ns == Strategy::Semihard) {
      auto provisional = mine_positive(d, labels, a, Strategy::Hard);
      auto neg = mine_negative(d, labels, a, Strategy::Semihard, provisional.indices.front());
      auto pos = mine_positive(d, labels, a, Strategy::Semihard, neg.indices.front());
      rec.positive_fallback = pos.fallback;
      rec.negative_fallback = neg.fallback;
      emit(pos.indices.front(), neg.indices.front(), pos.fallback || neg.fallback);
    } else if (ps == Strategy::Semihard) {
      auto negs = mine_negative(d, labels, a, ns);
      for (auto n : negs.indices) {
        auto pos = mine_positive(d, labels, a, Strategy::Semihard, n);
        rec.positive_fallback = rec.positive_fallback || pos.fallback;
        emit(pos.indices.front(), n, pos.fallback);
      }
    } else if (ns == Strategy::Semihard) {
      auto poss = mine_positive(d, labels, a, ps);
      for (auto p : poss.indices) {
        auto neg = mine_negative(d, labels, a, Strategy::Semihard, p);
        rec.negative_fallback = rec.negative_fallback || neg.fallback;
        emit(p, neg.indices.front(), neg.fallback);
      }
    } else {
      auto poss = mine_positive(d, labels, a, ps);
      auto negs = mine_negative(d, labels, a, ns);
      for (auto p : poss.indices)
        for (auto n : negs.indices) emit(p, n, false);
    }
    out.anchors.push_back(rec);
  }
  return out;
}

}  // namespace tforge::mining
