#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "tripletforge/dataset.hpp"
#include "tripletforge/encoders.hpp"
#include "tripletforge/losses.hpp"
#include "tripletforge/mining.hpp"
#include "tripletforge/training/adam.hpp"
#include "tripletforge/training/folds.hpp"
#include "tripletforge/training/metrics.hpp"
#include "tripletforge/training/sampler.hpp"

namespace tforge::training {

struct TrainConfig {
  std::size_t batch_size = 260;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  AdamConfig adam;
  std::uint64_t seed = 0;
  losses::LossConfig loss;
  mining::MiningPolicy mining;
  encoders::EncoderSpec encoder;
  bool balanced_batches = true;
  std::size_t micro_batch = 0;  // samples per forward pass; 0 picks one from the input length

  void validate() const {
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (batch_size < 2) throw ConfigError("batch size must be >= 2");
    if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
    adam.validate();
    loss.validate();
    encoder.validate();
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_total = 0.0;
  double train_triplet = 0.0;
  double train_ce = 0.0;
  std::size_t triplet_count = 0;
  double val_accuracy = 0.0;
  double wallclock_s = 0.0;
  double train_median = 0.0;  // median step loss; not part of the CSV log
};

struct TrainResult {
  encoders::ModelParams params;  // weights of the best validation epoch
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_accuracy = -1.0;
  std::size_t skipped_steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline constexpr std::size_t kDivergenceSteps = 3;
inline constexpr std::size_t kEvalChunk = 256;
/// Samples times time steps held by one taped forward pass when the micro
/// batch is chosen automatically. About 1.5 GB of activations.
inline constexpr std::size_t kStepBudget = 65536;

inline std::size_t micro_batch_size(std::size_t requested, std::size_t length) {
  if (requested > 0) return requested;
  return std::max<std::size_t>(1, kStepBudget / std::max<std::size_t>(1, length));
}

/// Class predictions for the given samples, inference mode, lowest index on ties.
inline std::vector<int> predict(encoders::ModelParams& params, const data::Dataset& data,
                                std::span<const std::size_t> indices) {
  std::vector<int> out;
  const std::size_t step = std::min(kEvalChunk, micro_batch_size(0, data.length));
  for (std::size_t start = 0; start < indices.size(); start += step) {
    auto chunk = indices.subspan(start, std::min(step, indices.size() - start));
    diff::Graph g(false);
    auto fw = encoders::forward(g, params, data.batch(chunk), false, nullptr);
    auto part = argmax_rows(fw.logits.values(), encoders::kClasses);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

inline EvalReport evaluate(encoders::ModelParams& params, const data::Dataset& data,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("evaluate: empty test set");
  auto truth = data.labels(indices);
  return make_report(truth, predict(params, data, indices), encoders::kClasses);
}

struct StepOutcome {
  losses::LossBreakdown breakdown;
  bool ok = false;
};

/// One optimizer step over a batch too large for a single taped forward pass.
/// A tape-free pass yields every embedding and logit; mining and the loss then
/// run on those, giving d(loss)/d(embeddings) and d(loss)/d(logits). Each slice
/// is re-run with the tape on and the same dropout draws, and backpropagating
/// the inner product with those gradients accumulates the exact weight
/// gradient. Input batch norm uses the whole batch's statistics throughout.
inline StepOutcome chunked_step(const TrainConfig& cfg, encoders::ModelParams& params,
                                std::vector<diff::Tensor>& weights, AdamState& state, const data::Dataset& data,
                                std::span<const std::size_t> batch, std::span<const int> labels,
                                std::size_t chunk, std::mt19937_64& rng) {
  const diff::Tensor x = data.batch(batch);
  const auto moments = diff::channel_moments(x);
  diff::update_running_moments(params.at("bn.running_mean"), params.at("bn.running_var"), moments,
                               diff::BatchNormOptions{}.momentum);
  const std::size_t n = batch.size(), dim = cfg.encoder.embedding_dim, per_sample = data.length * data.channels;
  auto slice = [&](std::size_t start, std::size_t count) {
    auto xv = x.values().subspan(start * per_sample, count * per_sample);
    return diff::Tensor({count, data.length, data.channels}, diff::Buffer(xv.begin(), xv.end()));
  };

  const std::mt19937_64 rng_start = rng;
  diff::Buffer emb(n * dim), logits(n * encoders::kClasses);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    diff::Graph g(false);
    auto fw = encoders::forward(g, params, slice(start, count), true, &rng, &moments);
    std::copy(fw.embeddings.values().begin(), fw.embeddings.values().end(), emb.begin() + start * dim);
    std::copy(fw.logits.values().begin(), fw.logits.values().end(),
              logits.begin() + start * encoders::kClasses);
  }

  mining::TripletSet set;
  if (cfg.loss.variant != losses::Variant::CrossEntropyOnly) {
    set = mining::build_triplets(
        mining::EmbeddingBatch::from_raw(std::vector<double>(emb.begin(), emb.end()),
                                         std::vector<int>(labels.begin(), labels.end()), dim),
        cfg.mining);
  }
  diff::Graph head;
  diff::Tensor e({n, dim}, std::move(emb), true), z({n, encoders::kClasses}, std::move(logits), true);
  auto loss = losses::combined_loss(head, losses::normalize_unit(head, e), set, z, labels, cfg.loss);
  StepOutcome out{loss.breakdown, std::isfinite(loss.breakdown.total)};
  if (!out.ok) return out;
  head.backprop(loss.total);

  rng = rng_start;
  for (auto& w : weights) w.zero_grad();
  auto ge = e.grad(), gz = z.grad();
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    diff::Graph g;
    auto fw = encoders::forward(g, params, slice(start, count), true, &rng, &moments);
    auto de = ge.subspan(start * dim, count * dim);
    auto dz = gz.subspan(start * encoders::kClasses, count * encoders::kClasses);
    diff::Tensor de_t({count, dim}, diff::Buffer(de.begin(), de.end()));
    diff::Tensor dz_t({count, encoders::kClasses}, diff::Buffer(dz.begin(), dz.end()));
    auto surrogate = diff::add(g, diff::dot(g, fw.embeddings, de_t), diff::dot(g, fw.logits, dz_t));
    g.backprop(surrogate);
  }
  out.ok = adam_step(weights, state, cfg.adam);
  return out;
}

/// Mini-batch training with early stopping on validation accuracy. Each step
/// runs the forward pass, mines triplets from the detached raw embeddings,
/// backpropagates triplet + cross-entropy loss and applies Adam. Steps with a
/// non-finite loss or gradient are skipped; three in a row abort with
/// NumericalError. The returned parameters are those of the best epoch.
inline TrainResult train(const TrainConfig& cfg, const data::Dataset& data, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> val_idx, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_idx.empty() || val_idx.empty()) throw ConfigError("train: empty training or validation split");
  if (cfg.encoder.input_length != data.length || cfg.encoder.input_channels != data.channels) {
    throw ConfigError("train: encoder expects " + std::to_string(cfg.encoder.input_length) + "x" +
                      std::to_string(cfg.encoder.input_channels) + " input, dataset is " +
                      std::to_string(data.length) + "x" + std::to_string(data.channels));
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  TrainResult result{encoders::build(cfg.encoder, cfg.seed), {}, 0, -1.0, 0};
  encoders::ModelParams params = result.params.clone();
  std::vector<diff::Tensor> weights = params.trainable();
  for (auto& w : weights) w.set_requires_grad(true);
  AdamState state;
  const bool use_triplets = cfg.loss.variant != losses::Variant::CrossEntropyOnly;

  std::vector<std::size_t> pool(train_idx.begin(), train_idx.end());
  BatchSampler sampler(pool, data.labels(pool), cfg.batch_size, cfg.balanced_batches);
  std::size_t bad_run = 0, since_best = 0;
  const std::size_t chunk = micro_batch_size(cfg.micro_batch, data.length);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    std::size_t steps = 0;
    std::vector<double> step_losses;
    for (const auto& batch : sampler.epoch(rng)) {
      const auto labels = data.labels(batch);
      if (batch.size() > chunk) {
        auto step = chunked_step(cfg, params, weights, state, data, batch, labels, chunk, rng);
        if (!step.ok) {
          ++result.skipped_steps;
          if (++bad_run >= kDivergenceSteps) {
            throw NumericalError("training diverged: " + std::to_string(bad_run) +
                                 " consecutive non-finite steps in epoch " + std::to_string(epoch) +
                                 " (last loss " + std::to_string(step.breakdown.total) + ")");
          }
          continue;
        }
        bad_run = 0;
        ++steps;
        step_losses.push_back(step.breakdown.total);
        row.train_total += step.breakdown.total;
        row.train_triplet += step.breakdown.triplet_term;
        row.train_ce += step.breakdown.ce_term;
        row.triplet_count += step.breakdown.triplet_count;
        continue;
      }
      diff::Graph g;
      auto fw = encoders::forward(g, params, data.batch(batch), true, &rng);
      mining::TripletSet set;
      if (use_triplets) {
        std::vector<double> raw(fw.embeddings.values().begin(), fw.embeddings.values().end());
        set = mining::build_triplets(mining::EmbeddingBatch::from_raw(std::move(raw), labels, fw.embeddings.dim(1)),
                                     cfg.mining);
      }
      diff::Tensor unit = losses::normalize_unit(g, fw.embeddings);
      auto loss = losses::combined_loss(g, unit, set, fw.logits, labels, cfg.loss);

      bool ok = std::isfinite(loss.breakdown.total);
      if (ok) {
        for (auto& w : weights) w.zero_grad();
        g.backprop(loss.total);
        ok = adam_step(weights, state, cfg.adam);
      }
      if (!ok) {
        ++result.skipped_steps;
        if (++bad_run >= kDivergenceSteps) {
          throw NumericalError("training diverged: " + std::to_string(bad_run) +
                               " consecutive non-finite steps in epoch " + std::to_string(epoch) +
                               " (last loss " + std::to_string(loss.breakdown.total) + ")");
        }
        continue;
      }
      bad_run = 0;
      ++steps;
      step_losses.push_back(loss.breakdown.total);
      row.train_total += loss.breakdown.total;
      row.train_triplet += loss.breakdown.triplet_term;
      row.train_ce += loss.breakdown.ce_term;
      row.triplet_count += loss.breakdown.triplet_count;
    }
    if (steps > 0) {
      row.train_total /= static_cast<double>(steps);
      row.train_triplet /= static_cast<double>(steps);
      row.train_ce /= static_cast<double>(steps);
      std::sort(step_losses.begin(), step_losses.end());
      const std::size_t mid = steps / 2;
      row.train_median = steps % 2 ? step_losses[mid] : 0.5 * (step_losses[mid - 1] + step_losses[mid]);
    }
    row.val_accuracy = evaluate(params, data, val_idx).accuracy;
    row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = row.val_accuracy;
      result.best_epoch = epoch;
      result.params = params.clone();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

struct FoldOutcome {
  std::size_t fold_id = 0;
  TrainResult training;
  EvalReport report;
};

struct ExperimentResult {
  std::vector<FoldOutcome> folds;
  EvalReport aggregate;  // summed confusion over folds
  double mean_accuracy = 0.0;
};

/// Worker count from TRIPLETFORGE_THREADS, defaulting to 1.
inline std::size_t thread_limit() {
  const char* env = std::getenv("TRIPLETFORGE_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) throw ConfigError("TRIPLETFORGE_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

/// Divergence inside one fold of an experiment.
class FoldDiverged : public NumericalError {
 public:
  FoldDiverged(std::size_t fold_id, const std::string& what)
      : NumericalError("fold " + std::to_string(fold_id) + ": " + what), fold(fold_id) {}
  std::size_t fold;
};

using FoldCallback = std::function<void(const FoldOutcome&)>;
using FoldEpochCallback = std::function<void(std::size_t fold_id, const EpochLog&)>;

/// Trains and evaluates every fold of `plan`. Folds are independent, so up to
/// `threads` of them run concurrently; each fold's result depends only on the
/// configuration, never on scheduling. Callbacks are serialized.
inline ExperimentResult run_experiment(const TrainConfig& cfg, const data::Dataset& data, const FoldPlan& plan,
                                       std::size_t threads = 1, const FoldCallback& on_fold = {},
                                       const FoldEpochCallback& on_epoch = {}) {
  cfg.validate();
  ExperimentResult out;
  out.folds.resize(plan.folds.size());
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      std::size_t f;
      {
        std::lock_guard lock(mu);
        if (next >= plan.folds.size() || failure) return;
        f = next++;
      }
      try {
        const auto& fold = plan.folds[f];
        const auto tr = data.select(fold.train), va = data.select(fold.val), te = data.select(fold.test);
        EpochCallback cb;
        if (on_epoch) {
          cb = [&, f](const EpochLog& row) {
            std::lock_guard lock(mu);
            on_epoch(f, row);
          };
        }
        FoldOutcome o{f, train(cfg, data, tr, va, cb), {}};
        o.report = evaluate(o.training.params, data, te);
        o.report.fold_id = static_cast<int>(f);
        std::lock_guard lock(mu);
        if (on_fold) on_fold(o);
        out.folds[f] = std::move(o);
      } catch (const NumericalError& e) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::make_exception_ptr(FoldDiverged(f, e.what()));
        return;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const std::size_t n = std::clamp<std::size_t>(threads, 1, plan.folds.size());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<EvalReport> reports;
  for (const auto& f : out.folds) {
    reports.push_back(f.report);
    out.mean_accuracy += f.report.accuracy;
  }
  out.mean_accuracy /= static_cast<double>(out.folds.size());
  out.aggregate = aggregate(reports);
  return out;
}

}  // namespace tforge::training
