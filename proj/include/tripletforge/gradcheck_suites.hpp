#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tripletforge/diff/gradcheck.hpp"
#include "tripletforge/diff/primitive_checks.hpp"
#include "tripletforge/encoders.hpp"
#include "tripletforge/losses.hpp"
#include "tripletforge/mining.hpp"

namespace tforge::gradcheck {

using diff::Graph;
using diff::Tensor;

struct SuiteEntry {
  std::string label;  // e.g. "npair/cnn1d-bilstm/conv1.weight"
  double max_error = 0.0;
  std::size_t coordinates = 0;
};

struct SuiteOptions {
  double eps = 1e-6;
  std::uint64_t seed = 7;
  std::size_t max_coordinates = 8;  // per tensor in the end-to-end scope
  std::size_t primitive_trials = 50;
};

inline double worst(const std::vector<SuiteEntry>& entries) {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_error);
  return w;
}

inline std::vector<SuiteEntry> primitives_suite(const SuiteOptions& opt = {}) {
  std::vector<SuiteEntry> out;
  for (const auto& r : diff::check_primitives(opt.primitive_trials, opt.seed, opt.eps)) {
    out.push_back({r.op, r.max_error, r.trials});
  }
  return out;
}

namespace detail {

inline Tensor gaussian(diff::Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(diff::numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline mining::TripletSet mined(const Tensor& raw, const std::vector<int>& labels, mining::MiningPolicy policy) {
  std::vector<double> values(raw.values().begin(), raw.values().end());
  return mining::build_triplets(mining::EmbeddingBatch::from_raw(std::move(values), labels, raw.dim(1)), policy);
}

}  // namespace detail

/// Each loss against its inputs: triplet variants through normalize_unit on
/// raw embeddings, cross-entropy on logits.
inline std::vector<SuiteEntry> losses_suite(const SuiteOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::vector<SuiteEntry> out;
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1};
  for (int trial = 0; trial < 5; ++trial) {
    Tensor raw = detail::gaussian({labels.size(), 6}, rng);
    for (auto pos : {mining::Strategy::Semihard, mining::Strategy::All})
      for (auto neg : {mining::Strategy::Hard, mining::Strategy::All}) {
        auto set = detail::mined(raw, labels, {pos, neg, mining::Space::Unit});
        for (auto v : {losses::Variant::NPair, losses::Variant::L2Margin, losses::Variant::CosineMargin}) {
          losses::LossConfig cfg;
          cfg.variant = v;
          double err = diff::check_gradient(
              [&](Graph& g, const Tensor& x) { return *losses::triplet_loss(g, set, losses::normalize_unit(g, x), cfg); },
              raw, opt.eps);
          out.push_back({std::string(losses::to_string(v)) + "/" + std::string(mining::to_string(pos)) + "-" +
                             std::string(mining::to_string(neg)),
                         err, raw.size()});
        }
      }
    Tensor logits = detail::gaussian({labels.size(), encoders::kClasses}, rng);
    out.push_back({"ce", diff::check_gradient([&](Graph& g, const Tensor& x) { return losses::cross_entropy(g, x, labels); },
                                              logits, opt.eps),
                   logits.size()});
  }
  return out;
}

inline constexpr losses::Variant kAllVariants[] = {losses::Variant::CrossEntropyOnly, losses::Variant::NPair,
                                                   losses::Variant::L2Margin, losses::Variant::CosineMargin};

/// Gradient of the full training objective with respect to every trainable
/// parameter tensor, for all four loss variants and one encoder kind on a toy
/// batch (N = 4, L = 81, C = 5, |E| = 8).
inline std::vector<SuiteEntry> end2end_case(encoders::Kind kind, const SuiteOptions& opt = {}) {
  encoders::EncoderSpec spec;
  spec.kind = kind;
  spec.embedding_dim = 8;
  spec.input_length = 81;
  spec.input_channels = 5;
  encoders::ModelParams params = encoders::build(spec, opt.seed);
  std::mt19937_64 rng(opt.seed + 1);
  Tensor x = detail::gaussian({4, spec.input_length, spec.input_channels}, rng);
  const std::vector<int> labels{0, 0, 1, 1};

  // Triplets are mined once from the unperturbed embeddings and held fixed.
  mining::TripletSet set;
  {
    Graph g(false);
    auto probe = params.clone();
    std::mt19937_64 drop(opt.seed + 2);
    set = detail::mined(encoders::forward(g, probe, x, true, &drop).embeddings, labels, {});
  }

  auto objectives = [&](Graph& g) {
    std::mt19937_64 drop(opt.seed + 2);
    auto fw = encoders::forward(g, params, x, true, &drop);
    Tensor unit = losses::normalize_unit(g, fw.embeddings);
    std::vector<Tensor> out;
    for (auto v : kAllVariants) {
      losses::LossConfig cfg;
      cfg.variant = v;
      out.push_back(losses::combined_loss(g, unit, set, fw.logits, labels, cfg).total);
    }
    return out;
  };

  std::vector<diff::NamedTensor> inputs;
  for (const auto& e : params.entries) {
    if (e.trainable) inputs.push_back({e.name, e.tensor});
  }
  diff::GradCheckOptions gopt;
  gopt.eps = opt.eps;
  gopt.max_coordinates = opt.max_coordinates;
  gopt.seed = opt.seed;
  auto results = diff::check_gradients_multi(objectives, inputs, gopt);
  std::vector<SuiteEntry> out;
  for (std::size_t k = 0; k < results.size(); ++k) {
    const std::string prefix =
        std::string(losses::to_string(kAllVariants[k])) + "/" + std::string(encoders::to_string(kind)) + "/";
    for (const auto& r : results[k]) out.push_back({prefix + r.name, r.max_error, r.coordinates});
  }
  return out;
}

inline std::vector<SuiteEntry> end2end_suite(const SuiteOptions& opt = {}) {
  std::vector<SuiteEntry> out;
  for (auto k : encoders::kAllKinds) {
    auto part = end2end_case(k, opt);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace tforge::gradcheck
