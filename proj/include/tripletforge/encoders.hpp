#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tripletforge/diff/ops.hpp"
#include "tripletforge/error.hpp"

namespace tforge::encoders {

using diff::Graph;
using diff::Shape;
using diff::Tensor;

enum class Kind { Cnn1dBiLstm, Cnn1d, StackedLstm, StackedBiLstm, Cnn1dLstm };

inline constexpr Kind kAllKinds[] = {Kind::Cnn1dBiLstm, Kind::Cnn1d, Kind::StackedLstm, Kind::StackedBiLstm,
                                     Kind::Cnn1dLstm};

inline std::string_view to_string(Kind k) {
  switch (k) {
    case Kind::Cnn1dBiLstm: return "cnn1d-bilstm";
    case Kind::Cnn1d: return "cnn1d";
    case Kind::StackedLstm: return "stacked-lstm";
    case Kind::StackedBiLstm: return "stacked-bilstm";
    case Kind::Cnn1dLstm: return "cnn1d-lstm";
  }
  return "?";
}

inline Kind parse_kind(std::string_view name) {
  for (Kind k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown encoder '" + std::string(name) +
                    "' (cnn1d-bilstm|cnn1d|stacked-lstm|stacked-bilstm|cnn1d-lstm)");
}

inline bool has_conv(Kind k) { return k == Kind::Cnn1dBiLstm || k == Kind::Cnn1d || k == Kind::Cnn1dLstm; }

inline constexpr std::size_t kConvKernel = 10;
inline constexpr std::size_t kPool = 3;
inline constexpr std::size_t kConvFilters[] = {128, 128, 256, 256};
inline constexpr std::size_t kHidden = 512;
inline constexpr std::size_t kClasses = 26;

struct EncoderSpec {
  Kind kind = Kind::Cnn1dBiLstm;
  std::size_t embedding_dim = 256;
  std::size_t input_length = 2000;
  std::size_t input_channels = 5;
  double dropout_keep = 0.5;

  /// Shortest input that survives the pooling stack.
  std::size_t min_input_length() const {
    if (!has_conv(kind)) return 1;
    std::size_t m = 1;
    for (std::size_t i = 0; i < std::size(kConvFilters); ++i) m *= kPool;
    return m;
  }

  void validate() const {
    if (embedding_dim == 0) throw ConfigError("embedding dimension must be > 0");
    if (input_channels == 0) throw ConfigError("input channel count must be > 0");
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("dropout keep must be in (0, 1]");
    if (input_length < min_input_length()) {
      throw ConfigError("input length " + std::to_string(input_length) + " is too short for " +
                        std::string(to_string(kind)) + ": need at least " + std::to_string(min_input_length()));
    }
  }

  /// Sequence lengths after each max-pool (empty for the recurrent-only kinds).
  std::vector<std::size_t> pooled_lengths() const {
    std::vector<std::size_t> out;
    if (!has_conv(kind)) return out;
    std::size_t len = input_length;
    for (std::size_t i = 0; i < std::size(kConvFilters); ++i) out.push_back(len = len / kPool);
    return out;
  }
};

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Encoder weights followed by the classifier head. Batch-norm running
/// statistics are stored as non-trainable entries.
struct ModelParams {
  EncoderSpec spec;
  std::uint64_t seed = 0;
  std::vector<Parameter> entries;

  const Tensor& at(std::string_view name) const {
    for (const auto& e : entries) {
      if (e.name == name) return e.tensor;
    }
    throw Error("no parameter named '" + std::string(name) + "'");
  }
  Tensor& at(std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }
  bool contains(std::string_view name) const {
    for (const auto& e : entries) {
      if (e.name == name) return true;
    }
    return false;
  }

  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    for (const auto& e : entries) {
      if (e.trainable) out.push_back(e.tensor);
    }
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) {
      if (e.trainable) n += e.tensor.size();
    }
    return n;
  }

  /// Deep copy; the copy shares no storage with this one.
  ModelParams clone() const {
    ModelParams out{spec, seed, {}};
    for (const auto& e : entries) out.entries.push_back({e.name, e.tensor.clone(), e.trainable});
    return out;
  }
};

namespace detail {

class Builder {
 public:
  Builder(ModelParams& p, std::uint64_t seed) : p_(p), rng_(seed) {}

  void uniform(const std::string& name, Shape shape, double limit) {
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<double> v(diff::numel(shape));
    for (auto& x : v) x = u(rng_);
    add(name, std::move(shape), std::move(v), true);
  }

  void constant(const std::string& name, Shape shape, double value, bool trainable = true) {
    std::vector<double> v(diff::numel(shape), value);
    add(name, std::move(shape), std::move(v), trainable);
  }

  void add(const std::string& name, Shape shape, std::vector<double> v, bool trainable) {
    p_.entries.push_back({name, Tensor(std::move(shape), std::move(v)), trainable});
  }

  // He-uniform for ReLU layers.
  void relu_layer(const std::string& prefix, std::size_t fan_in, std::size_t out) {
    uniform(prefix + ".weight", {fan_in, out}, std::sqrt(6.0 / static_cast<double>(fan_in)));
    constant(prefix + ".bias", {out}, 0.0);
  }

  void lstm(const std::string& prefix, std::size_t in, std::size_t h) {
    uniform(prefix + ".w_input", {in, 4 * h}, 1.0 / std::sqrt(static_cast<double>(in)));
    uniform(prefix + ".w_hidden", {h, 4 * h}, 1.0 / std::sqrt(static_cast<double>(h)));
    std::vector<double> bias(4 * h, 0.0);
    for (std::size_t j = h; j < 2 * h; ++j) bias[j] = 1.0;  // forget gate
    add(prefix + ".bias", {4 * h}, std::move(bias), true);
  }

 private:
  ModelParams& p_;
  std::mt19937_64 rng_;
};

}  // namespace detail

/// Randomly initialized parameters for `spec`, fully determined by `seed`.
inline ModelParams build(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams p{spec, seed, {}};
  detail::Builder b(p, seed);
  const std::size_t c = spec.input_channels;
  b.constant("bn.gamma", {c}, 1.0);
  b.constant("bn.beta", {c}, 0.0);
  b.constant("bn.running_mean", {c}, 0.0, false);
  b.constant("bn.running_var", {c}, 1.0, false);

  std::size_t features = c;
  if (has_conv(spec.kind)) {
    for (std::size_t i = 0; i < std::size(kConvFilters); ++i) {
      b.relu_layer("conv" + std::to_string(i + 1), kConvKernel * features, kConvFilters[i]);
      features = kConvFilters[i];
    }
  }
  switch (spec.kind) {
    case Kind::Cnn1dBiLstm:
      b.lstm("lstm1.fwd", features, kHidden);
      b.lstm("lstm1.bwd", features, kHidden);
      features = 2 * kHidden;
      break;
    case Kind::Cnn1d:
      break;
    case Kind::StackedLstm:
      b.lstm("lstm1.fwd", features, kHidden);
      b.lstm("lstm2.fwd", kHidden, kHidden);
      features = kHidden;
      break;
    case Kind::StackedBiLstm:
      b.lstm("lstm1.fwd", features, kHidden);
      b.lstm("lstm1.bwd", features, kHidden);
      b.lstm("lstm2.fwd", 2 * kHidden, kHidden);
      b.lstm("lstm2.bwd", 2 * kHidden, kHidden);
      features = 2 * kHidden;
      break;
    case Kind::Cnn1dLstm:
      b.lstm("lstm1.fwd", features, kHidden);
      features = kHidden;
      break;
  }
  b.relu_layer("dense", features, spec.embedding_dim);
  const double lim = 1.0 / std::sqrt(static_cast<double>(spec.embedding_dim));
  b.uniform("classifier.weight", {spec.embedding_dim, kClasses}, lim);
  b.constant("classifier.bias", {kClasses}, 0.0);
  return p;
}

/// Trainable parameter count derived from layer formulas alone.
inline std::size_t expected_parameter_count(const EncoderSpec& spec) {
  auto lstm = [](std::size_t in, std::size_t h) { return 4 * h * (in + h) + 4 * h; };
  std::size_t n = 2 * spec.input_channels, features = spec.input_channels;
  if (has_conv(spec.kind)) {
    for (std::size_t f : kConvFilters) {
      n += kConvKernel * features * f + f;
      features = f;
    }
  }
  switch (spec.kind) {
    case Kind::Cnn1dBiLstm: n += 2 * lstm(features, kHidden); features = 2 * kHidden; break;
    case Kind::Cnn1d: break;
    case Kind::StackedLstm: n += lstm(features, kHidden) + lstm(kHidden, kHidden); features = kHidden; break;
    case Kind::StackedBiLstm:
      n += 2 * lstm(features, kHidden) + 2 * lstm(2 * kHidden, kHidden);
      features = 2 * kHidden;
      break;
    case Kind::Cnn1dLstm: n += lstm(features, kHidden); features = kHidden; break;
  }
  n += features * spec.embedding_dim + spec.embedding_dim;
  n += spec.embedding_dim * kClasses + kClasses;
  return n;
}

namespace detail {

// Runs one LSTM direction over (N, T, D). Returns (N, T, H) when
// `sequence` is set, otherwise the state after the last processed step (N, H).
inline Tensor lstm_layer(Graph& g, const ModelParams& p, const std::string& prefix, const Tensor& x, bool reverse,
                         bool sequence) {
  const std::size_t n = x.dim(0), steps = x.dim(1), d = x.dim(2);
  const Tensor& w_in = p.at(prefix + ".w_input");
  const Tensor& w_h = p.at(prefix + ".w_hidden");
  const std::size_t h = w_h.dim(0);
  Tensor flat = diff::reshape(g, x, {n * steps, d});
  Tensor gates = diff::reshape(g, diff::add_bias(g, diff::matmul(g, flat, w_in), p.at(prefix + ".bias")),
                               {n, steps, 4 * h});
  diff::LstmState state{Tensor::zeros({n, h}), Tensor::zeros({n, h})};
  std::vector<Tensor> outputs(sequence ? steps : 0, Tensor::zeros({n, h}));
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    state = diff::lstm_cell(g, diff::select_step(g, gates, t), state.h, state.c, w_h);
    if (sequence) outputs[t] = state.h;
  }
  return sequence ? diff::stack_steps(g, outputs) : state.h;
}

inline Tensor bilstm_layer(Graph& g, const ModelParams& p, const std::string& prefix, const Tensor& x,
                           bool sequence) {
  return diff::concat_last(g, lstm_layer(g, p, prefix + ".fwd", x, false, sequence),
                           lstm_layer(g, p, prefix + ".bwd", x, true, sequence));
}

}  // namespace detail

/// Raw embeddings z = relu(dense(features)) for an (N, L, C) batch. In
/// training mode batch norm uses batch statistics and updates the running
/// averages stored in `p`, unless `input_moments` supplies the statistics of a
/// larger batch that `x` is a slice of.
inline Tensor encode(Graph& g, ModelParams& p, const Tensor& x, bool training,
                     const diff::ChannelMoments* input_moments = nullptr) {
  const EncoderSpec& spec = p.spec;
  if (x.rank() != 3 || x.dim(2) != spec.input_channels || x.dim(1) < spec.min_input_length()) {
    throw ShapeError("encode: expected (N, L >= " + std::to_string(spec.min_input_length()) + ", " +
                     std::to_string(spec.input_channels) + ") input, got " + diff::to_string(x.shape()));
  }
  diff::BatchNormOptions bn_opt;
  bn_opt.training = training;
  bn_opt.batch_moments = input_moments;
  Tensor h = diff::batchnorm1d(g, x, p.at("bn.gamma"), p.at("bn.beta"), p.at("bn.running_mean"),
                               p.at("bn.running_var"), bn_opt);
  if (has_conv(spec.kind)) {
    for (std::size_t i = 1; i <= std::size(kConvFilters); ++i) {
      const std::string name = "conv" + std::to_string(i);
      h = diff::maxpool1d(g, diff::relu(g, diff::conv1d(g, h, p.at(name + ".weight"), p.at(name + ".bias"))), kPool,
                          kPool);
    }
  }
  switch (spec.kind) {
    case Kind::Cnn1dBiLstm: h = detail::bilstm_layer(g, p, "lstm1", h, false); break;
    case Kind::Cnn1d: h = diff::global_avg_pool1d(g, h); break;
    case Kind::StackedLstm:
      h = detail::lstm_layer(g, p, "lstm2.fwd", detail::lstm_layer(g, p, "lstm1.fwd", h, false, true), false, false);
      break;
    case Kind::StackedBiLstm:
      h = detail::bilstm_layer(g, p, "lstm2", detail::bilstm_layer(g, p, "lstm1", h, true), false);
      break;
    case Kind::Cnn1dLstm: h = detail::lstm_layer(g, p, "lstm1.fwd", h, false, false); break;
  }
  return diff::relu(g, diff::add_bias(g, diff::matmul(g, h, p.at("dense.weight")), p.at("dense.bias")));
}

/// Classifier logits θ_C^T z + b for (N, |E|) raw embeddings.
inline Tensor logits(Graph& g, const ModelParams& p, const Tensor& z) {
  return diff::add_bias(g, diff::matmul(g, z, p.at("classifier.weight")), p.at("classifier.bias"));
}

/// Class probabilities, softmax of the logits.
inline Tensor classify(Graph& g, const ModelParams& p, const Tensor& z) { return diff::softmax(g, logits(g, p, z)); }

struct ForwardResult {
  Tensor embeddings;  // raw z, (N, |E|)
  Tensor logits;      // (N, 26)
};

/// Encoder plus classifier head. When training, dropout is applied to the
/// classifier input only; the returned embeddings are undropped.
inline ForwardResult forward(Graph& g, ModelParams& p, const Tensor& x, bool training, std::mt19937_64* rng,
                             const diff::ChannelMoments* input_moments = nullptr) {
  Tensor z = encode(g, p, x, training, input_moments);
  Tensor head_in = z;
  if (training && p.spec.dropout_keep < 1.0) {
    if (rng == nullptr) throw ConfigError("forward: training with dropout needs a random generator");
    head_in = diff::dropout_mask(g, z, p.spec.dropout_keep, *rng);
  }
  return {z, logits(g, p, head_in)};
}

}  // namespace tforge::encoders
