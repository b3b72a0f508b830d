#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "tripletforge/dataset.hpp"
#include "tripletforge/error.hpp"

namespace tforge::training {

using data::Key;

enum class Mode { UserIndependent, UserDependent };

inline std::string_view to_string(Mode m) { return m == Mode::UserIndependent ? "user-indep" : "user-dep"; }

inline Mode parse_mode(std::string_view name) {
  if (name == "user-indep") return Mode::UserIndependent;
  if (name == "user-dep") return Mode::UserDependent;
  throw ConfigError("unknown mode '" + std::string(name) + "' (user-dep|user-indep)");
}

inline constexpr std::size_t kFolds = 5;
inline constexpr int kRepetitions = 10;

struct Fold {
  std::vector<Key> train;
  std::vector<Key> val;
  std::vector<Key> test;
};

struct FoldPlan {
  Mode mode = Mode::UserDependent;
  std::vector<Fold> folds;
};

namespace detail {

// Moves a seeded 20% of the pool (at least one key) into validation.
inline void split_pool(std::vector<Key> pool, Fold& fold, std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t n_val = std::max<std::size_t>(1, pool.size() / 5);
  if (pool.size() < 2) throw ConfigError("training pool has " + std::to_string(pool.size()) + " keys, need >= 2");
  fold.val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  fold.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  std::sort(fold.val.begin(), fold.val.end());
  std::sort(fold.train.begin(), fold.train.end());
}

}  // namespace detail

/// Five folds over (subject, repetition) keys.
///
/// UserIndependent holds out a disjoint fifth of the subjects per fold;
/// UserDependent holds out two repetition indices of every subject per fold
/// and needs repetitions 1..10 for each subject. The remaining keys are split
/// 80:20 into train and validation. Every key carries all letters of its
/// session, so the split keeps the class balance.
inline FoldPlan make_folds(std::vector<Key> keys, Mode mode, std::uint64_t seed) {
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::map<int, std::set<int>> reps;
  for (const auto& k : keys) reps[k.subject].insert(k.repetition);

  std::mt19937_64 rng(seed);
  FoldPlan plan{mode, std::vector<Fold>(kFolds)};
  if (mode == Mode::UserIndependent) {
    if (reps.size() < kFolds) {
      throw ConfigError("user-independent folds need at least 5 subjects, dataset has " +
                        std::to_string(reps.size()));
    }
    std::vector<int> subjects;
    for (const auto& [s, _] : reps) subjects.push_back(s);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    for (std::size_t f = 0; f < kFolds; ++f) {
      std::set<int> held;
      for (std::size_t i = f; i < subjects.size(); i += kFolds) held.insert(subjects[i]);
      std::vector<Key> pool;
      for (const auto& k : keys) (held.count(k.subject) ? plan.folds[f].test : pool).push_back(k);
      detail::split_pool(std::move(pool), plan.folds[f], rng);
    }
  } else {
    for (const auto& [s, r] : reps) {
      if (r.size() != static_cast<std::size_t>(kRepetitions) || *r.begin() != 1 || *r.rbegin() != kRepetitions) {
        throw ConfigError("user-dependent folds need repetitions 1..10 for every subject; subject " +
                          std::to_string(s) + " has " + std::to_string(r.size()));
      }
    }
    if (reps.empty()) throw ConfigError("user-dependent folds need at least one subject");
    std::vector<int> order(kRepetitions);
    for (int i = 0; i < kRepetitions; ++i) order[static_cast<std::size_t>(i)] = i + 1;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t f = 0; f < kFolds; ++f) {
      const std::set<int> held{order[2 * f], order[2 * f + 1]};
      std::vector<Key> pool;
      for (const auto& k : keys) (held.count(k.repetition) ? plan.folds[f].test : pool).push_back(k);
      detail::split_pool(std::move(pool), plan.folds[f], rng);
    }
  }
  return plan;
}

}  // namespace tforge::training
