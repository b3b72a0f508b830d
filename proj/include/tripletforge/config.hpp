#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include "json.hpp"

#include "tripletforge/dataio.hpp"
#include "tripletforge/error.hpp"
#include "tripletforge/signal.hpp"
#include "tripletforge/training/train.hpp"

namespace tforge::config {

using nlohmann::json;

/// Everything a CLI run can be configured with.
struct RunConfig {
  training::TrainConfig train;
  training::Mode mode = training::Mode::UserDependent;
  double target_rate_hz = 500.0;
  dataio::SynthConfig synth;
  dataio::Precision checkpoint_precision = dataio::Precision::Float32;
};

/// Preprocessing settings; the model input length is the encoder's.
inline signal::PreprocessConfig preprocess_config(const RunConfig& c) {
  return {c.target_rate_hz, c.train.encoder.input_length};
}

namespace detail {

struct Field {
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <class T>
T as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ConfigError("");
      }
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

template <class T, class M>
Field plain(const std::string& key, M member) {
  return {[=](RunConfig& c, const json& v) { std::invoke(member, c) = as<T>(v, key); },
          [=](const RunConfig& c) { return json(std::invoke(member, c)); }};
}

template <class Parse, class Print, class M>
Field named(const std::string& key, M member, Parse parse, Print print) {
  return {[=](RunConfig& c, const json& v) { std::invoke(member, c) = parse(as<std::string>(v, key)); },
          [=](const RunConfig& c) { return json(std::string(print(std::invoke(member, c)))); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;

    t["train.batch_size"] = plain<std::size_t>("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    t["train.max_epochs"] = plain<std::size_t>("train.max_epochs", [](auto& c) -> auto& { return c.train.max_epochs; });
    t["train.patience"] = plain<std::size_t>("train.patience", [](auto& c) -> auto& { return c.train.patience; });
    t["train.lr"] = plain<double>("train.lr", [](auto& c) -> auto& { return c.train.adam.lr; });
    t["train.adam_beta1"] = plain<double>("train.adam_beta1", [](auto& c) -> auto& { return c.train.adam.beta1; });
    t["train.adam_beta2"] = plain<double>("train.adam_beta2", [](auto& c) -> auto& { return c.train.adam.beta2; });
    t["train.adam_eps"] = plain<double>("train.adam_eps", [](auto& c) -> auto& { return c.train.adam.eps; });
    t["train.seed"] = plain<std::uint64_t>("train.seed", [](auto& c) -> auto& { return c.train.seed; });
    t["train.balanced_batches"] =
        plain<bool>("train.balanced_batches", [](auto& c) -> auto& { return c.train.balanced_batches; });
    t["train.micro_batch"] = plain<std::size_t>("train.micro_batch", [](auto& c) -> auto& { return c.train.micro_batch; });
    t["train.mode"] = named(
        "train.mode", [](auto& c) -> auto& { return c.mode; }, training::parse_mode,
        [](training::Mode m) { return training::to_string(m); });
    t["loss.variant"] = named(
        "loss.variant", [](auto& c) -> auto& { return c.train.loss.variant; }, losses::parse_variant,
        [](losses::Variant v) { return losses::to_string(v); });
    t["loss.tau"] = plain<double>("loss.tau", [](auto& c) -> auto& { return c.train.loss.tau; });
    t["loss.alpha_l2"] = plain<double>("loss.alpha_l2", [](auto& c) -> auto& { return c.train.loss.alpha_l2; });
    t["loss.alpha_cos"] = plain<double>("loss.alpha_cos", [](auto& c) -> auto& { return c.train.loss.alpha_cos; });
    t["loss.aggregation"] = named(
        "loss.aggregation", [](auto& c) -> auto& { return c.train.loss.aggregation; }, losses::parse_aggregation,
        [](losses::Aggregation a) { return losses::to_string(a); });
    t["mining.positive"] = named(
        "mining.positive", [](auto& c) -> auto& { return c.train.mining.positive; }, mining::parse_strategy,
        [](mining::Strategy s) { return mining::to_string(s); });
    t["mining.negative"] = named(
        "mining.negative", [](auto& c) -> auto& { return c.train.mining.negative; }, mining::parse_strategy,
        [](mining::Strategy s) { return mining::to_string(s); });
    t["mining.space"] = named(
        "mining.space", [](auto& c) -> auto& { return c.train.mining.space; }, mining::parse_space,
        [](mining::Space s) { return mining::to_string(s); });
    t["encoder.kind"] = named(
        "encoder.kind", [](auto& c) -> auto& { return c.train.encoder.kind; }, encoders::parse_kind,
        [](encoders::Kind k) { return encoders::to_string(k); });
    t["encoder.embedding_dim"] =
        plain<std::size_t>("encoder.embedding_dim", [](auto& c) -> auto& { return c.train.encoder.embedding_dim; });
    t["encoder.input_length"] =
        plain<std::size_t>("encoder.input_length", [](auto& c) -> auto& { return c.train.encoder.input_length; });
    t["encoder.dropout_keep"] =
        plain<double>("encoder.dropout_keep", [](auto& c) -> auto& { return c.train.encoder.dropout_keep; });
    t["preprocess.target_rate_hz"] =
        plain<double>("preprocess.target_rate_hz", [](auto& c) -> auto& { return c.target_rate_hz; });
    t["checkpoint.precision"] = named(
        "checkpoint.precision", [](auto& c) -> auto& { return c.checkpoint_precision; }, dataio::parse_precision,
        [](dataio::Precision p) { return dataio::to_string(p); });
    t["synth.subjects"] = plain<int>("synth.subjects", [](auto& c) -> auto& { return c.synth.n_subjects; });
    t["synth.repetitions"] = plain<int>("synth.repetitions", [](auto& c) -> auto& { return c.synth.n_repetitions; });
    t["synth.classes"] = plain<int>("synth.classes", [](auto& c) -> auto& { return c.synth.classes; });
    t["synth.length_min"] = plain<std::size_t>("synth.length_min", [](auto& c) -> auto& { return c.synth.length_min; });
    t["synth.length_max"] = plain<std::size_t>("synth.length_max", [](auto& c) -> auto& { return c.synth.length_max; });
    t["synth.sample_rate_hz"] =
        plain<double>("synth.sample_rate_hz", [](auto& c) -> auto& { return c.synth.sample_rate_hz; });
    t["synth.noise_sigma"] = plain<double>("synth.noise_sigma", [](auto& c) -> auto& { return c.synth.noise_sigma; });
    t["synth.subject_variability"] =
        plain<double>("synth.subject_variability", [](auto& c) -> auto& { return c.synth.subject_variability; });
    t["synth.seed"] = plain<std::uint64_t>("synth.seed", [](auto& c) -> auto& { return c.synth.seed; });
    return t;
  }();
  return table;
}

}  // namespace detail

/// Sets one dotted key; unknown keys and wrongly typed values are ConfigErrors.
inline void set(RunConfig& c, const std::string& key, const json& value) {
  auto it = detail::fields().find(key);
  if (it == detail::fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(c, value);
}

/// Applies a flat JSON object of dotted keys.
inline void apply(RunConfig& c, const json& obj) {
  if (!obj.is_object()) throw ConfigError("config file must hold a JSON object of dotted keys");
  for (const auto& [key, value] : obj.items()) set(c, key, value);
}

inline void apply_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json obj;
  try {
    obj = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  config::apply(c, obj);
}

/// Flat dotted-key view of every setting.
inline json to_json(const RunConfig& c) {
  json out = json::object();
  for (const auto& [key, field] : detail::fields()) out[key] = field.get(c);
  return out;
}

}  // namespace tforge::config
