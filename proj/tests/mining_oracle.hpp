#pragma once

// Brute-force reference miner. Candidates are ranked by a full sort of
// (distance, index) keys rather than a running extremum.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "tripletforge/mining.hpp"

namespace oracle {

using tforge::mining::EmbeddingBatch;
using tforge::mining::MiningPolicy;
using tforge::mining::Space;
using tforge::mining::Strategy;
using tforge::mining::Triplet;

inline double distance(const std::vector<double>& x, std::size_t dim, std::size_t i, std::size_t j) {
  if (i == j) return 0.0;
  const std::size_t lo = std::min(i, j), hi = std::max(i, j);
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) s += (x[lo * dim + k] - x[hi * dim + k]) * (x[lo * dim + k] - x[hi * dim + k]);
  return std::sqrt(s);
}

/// N in [2, 64], dim in [1, 16], 2..10 classes. Half the batches use coarse
/// grid coordinates so that distance ties are common.
inline EmbeddingBatch random_batch(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n_dist(2, 64), dim_dist(1, 16);
  std::uniform_int_distribution<int> class_dist(2, 10), grid(-2, 2);
  std::normal_distribution<double> nd;
  const std::size_t n = n_dist(rng), dim = dim_dist(rng);
  const int classes = class_dist(rng);
  const bool coarse = rng() % 2 == 0;
  std::uniform_int_distribution<int> label(0, classes - 1);
  std::vector<double> raw(n * dim);
  for (auto& v : raw) v = coarse ? 0.5 * grid(rng) : nd(rng);
  std::vector<int> labels(n);
  for (auto& l : labels) l = label(rng);
  return EmbeddingBatch::from_raw(std::move(raw), std::move(labels), dim);
}

struct Pick {
  std::vector<std::size_t> indices;
  bool fallback = false;
};

inline Pick pick(const EmbeddingBatch& b, Space space, std::size_t a, bool positive, Strategy s,
                 std::optional<std::size_t> ref) {
  const auto& x = b.rows(space);
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < b.n; ++i) {
    const bool same = b.labels[i] == b.labels[a];
    if (positive ? (same && i != a) : !same) cand.push_back(i);
  }
  Pick out;
  if (cand.empty()) return out;
  if (s == Strategy::All) {
    out.indices = cand;
    return out;
  }
  // Sort ascending by distance (wantFar negates it); index breaks ties.
  auto best = [&](const std::vector<std::size_t>& c, bool want_far) {
    std::vector<std::pair<double, std::size_t>> keyed;
    for (auto i : c) {
      const double dv = distance(x, b.dim, a, i);
      keyed.emplace_back(want_far ? -dv : dv, i);
    }
    std::sort(keyed.begin(), keyed.end());
    return keyed.front().second;
  };
  const bool hard_far = positive;
  if (s == Strategy::Easy) {
    out.indices = {best(cand, !hard_far)};
  } else if (s == Strategy::Hard) {
    out.indices = {best(cand, hard_far)};
  } else {
    const double r = distance(x, b.dim, a, *ref);
    std::vector<std::size_t> ok;
    for (auto i : cand) {
      const double dv = distance(x, b.dim, a, i);
      if (positive ? dv < r : dv > r) ok.push_back(i);
    }
    if (ok.empty()) {
      out.fallback = true;
      out.indices = {best(cand, hard_far)};
    } else {
      out.indices = {best(ok, positive)};
    }
  }
  return out;
}

inline std::vector<Triplet> build(const EmbeddingBatch& b, const MiningPolicy& p) {
  std::vector<Triplet> out;
  const Space sp = p.space;
  for (std::size_t a = 0; a < b.n; ++a) {
    auto probe_p = pick(b, sp, a, true, Strategy::All, std::nullopt);
    auto probe_n = pick(b, sp, a, false, Strategy::All, std::nullopt);
    if (probe_p.indices.empty() || probe_n.indices.empty()) continue;
    const bool semi_p = p.positive == Strategy::Semihard, semi_n = p.negative == Strategy::Semihard;
    if (semi_p && semi_n) {
      auto hp = pick(b, sp, a, true, Strategy::Hard, std::nullopt);
      auto n = pick(b, sp, a, false, Strategy::Semihard, hp.indices[0]);
      auto q = pick(b, sp, a, true, Strategy::Semihard, n.indices[0]);
      out.push_back({a, q.indices[0], n.indices[0], q.fallback || n.fallback});
    } else if (semi_p) {
      for (auto n : pick(b, sp, a, false, p.negative, std::nullopt).indices) {
        auto q = pick(b, sp, a, true, Strategy::Semihard, n);
        out.push_back({a, q.indices[0], n, q.fallback});
      }
    } else if (semi_n) {
      for (auto q : pick(b, sp, a, true, p.positive, std::nullopt).indices) {
        auto n = pick(b, sp, a, false, Strategy::Semihard, q);
        out.push_back({a, q, n.indices[0], n.fallback});
      }
    } else {
      for (auto q : pick(b, sp, a, true, p.positive, std::nullopt).indices)
        for (auto n : pick(b, sp, a, false, p.negative, std::nullopt).indices) out.push_back({a, q, n, false});
    }
  }
  return out;
}

}  // namespace oracle
