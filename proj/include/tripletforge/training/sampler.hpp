#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "tripletforge/error.hpp"

namespace tforge::training {

/// Splits a pool of sample indices into the mini-batches of one epoch.
///
/// Balanced mode with batch_size divisible by the class count and at least
/// batch_size / classes samples per class gives every batch exactly that many
/// samples of each class, drawn from independently shuffled per-class queues.
/// An epoch has floor(largest class / quota) batches; smaller classes wrap
/// around and the remainder of the largest class waits for the next epoch.
/// Otherwise balanced mode falls back to a stratified interleave chunked into
/// batches, and unbalanced mode is a plain permutation. Neither of those
/// repeats a sample within an epoch. Trailing batches of fewer than two
/// samples are dropped.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::vector<int> labels, std::size_t batch_size, bool balanced)
      : pool_(std::move(pool)), labels_(std::move(labels)), batch_size_(batch_size), balanced_(balanced) {
    if (pool_.empty()) throw ConfigError("sampler: empty training pool");
    if (pool_.size() != labels_.size()) throw ConfigError("sampler: pool and label counts differ");
    if (batch_size_ < 2) throw ConfigError("sampler: batch size must be >= 2");
    for (std::size_t i = 0; i < pool_.size(); ++i) by_class_[labels_[i]].push_back(pool_[i]);
  }

  /// True when epochs use exact per-class quotas.
  bool exact_quota() const {
    if (!balanced_ || batch_size_ % by_class_.size() != 0) return false;
    const std::size_t q = batch_size_ / by_class_.size();
    for (const auto& [_, members] : by_class_) {
      if (members.size() < q) return false;
    }
    return true;
  }

  std::vector<std::vector<std::size_t>> epoch(std::mt19937_64& rng) const {
    std::vector<std::vector<std::size_t>> batches;
    if (exact_quota()) {
      const std::size_t q = batch_size_ / by_class_.size();
      std::size_t largest = 0;
      std::vector<std::vector<std::size_t>> queues;
      for (const auto& [_, members] : by_class_) {
        queues.push_back(members);
        std::shuffle(queues.back().begin(), queues.back().end(), rng);
        largest = std::max(largest, members.size());
      }
      const std::size_t count = largest / q;
      for (std::size_t b = 0; b < count; ++b) {
        std::vector<std::size_t> batch;
        for (const auto& queue : queues)
          for (std::size_t j = 0; j < q; ++j) batch.push_back(queue[(b * q + j) % queue.size()]);
        std::shuffle(batch.begin(), batch.end(), rng);
        batches.push_back(std::move(batch));
      }
      return batches;
    }

    std::vector<std::size_t> order;
    if (balanced_) {
      // Each class member gets a jittered position in [0, 1); sorting spreads
      // every class evenly through the epoch.
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<std::pair<double, std::size_t>> keyed;
      for (const auto& [_, members] : by_class_) {
        auto shuffled = members;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const double step = 1.0 / static_cast<double>(shuffled.size());
        for (std::size_t k = 0; k < shuffled.size(); ++k) {
          keyed.emplace_back((static_cast<double>(k) + u(rng)) * step, shuffled[k]);
        }
      }
      std::sort(keyed.begin(), keyed.end());
      for (const auto& [_, idx] : keyed) order.push_back(idx);
    } else {
      order = pool_;
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t start = 0; start < order.size(); start += batch_size_) {
      const std::size_t end = std::min(order.size(), start + batch_size_);
      if (end - start < 2) break;
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }

 private:
  std::vector<std::size_t> pool_;
  std::vector<int> labels_;
  std::size_t batch_size_;
  bool balanced_;
  std::map<int, std::vector<std::size_t>> by_class_;
};

}  // namespace tforge::training
