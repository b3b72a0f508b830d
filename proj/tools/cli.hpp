#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tripletforge/config.hpp"
#include "tripletforge/dataio.hpp"
#include "tripletforge/dataset.hpp"
#include "tripletforge/gradcheck_suites.hpp"
#include "tripletforge/mining.hpp"
#include "tripletforge/training/train.hpp"

namespace tforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kConfigError = 2, kNumericalError = 3, kInternalError = 4 };

inline constexpr double kGradTolerance = 1e-4;

// ---- output helpers --------------------------------------------------------

/// Shortest decimal text that reads back to the same double.
inline std::string exact(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

/// Creates `dir`, refusing one that already holds files.
inline void fresh_directory(const fs::path& dir) {
  if (fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir))) {
    throw ConfigError("output directory " + dir.string() + " already exists and is not empty");
  }
  fs::create_directories(dir);
}

inline const char* kLogHeader = "epoch,train_total,train_triplet,train_ce,triplet_count,val_accuracy,wallclock_s\n";

inline std::string log_row(const training::EpochLog& r) {
  return std::to_string(r.epoch) + "," + exact(r.train_total) + "," + exact(r.train_triplet) + "," +
         exact(r.train_ce) + "," + std::to_string(r.triplet_count) + "," + exact(r.val_accuracy) + "," +
         exact(r.wallclock_s) + "\n";
}

inline std::string letter(std::size_t c) { return std::string(1, static_cast<char>('A' + c)); }

inline std::string confusion_csv(const training::EvalReport& r) {
  std::string s = "true\\pred";
  for (std::size_t c = 0; c < r.classes; ++c) s += "," + letter(c);
  s += "\n";
  for (std::size_t i = 0; i < r.classes; ++i) {
    s += letter(i);
    for (auto v : r.confusion[i]) s += "," + std::to_string(v);
    s += "\n";
  }
  return s;
}

inline json per_class_json(const training::EvalReport& r) {
  json rows = json::array();
  for (std::size_t c = 0; c < r.classes; ++c) {
    std::size_t support = 0;
    for (auto v : r.confusion[c]) support += v;
    rows.push_back({{"letter", letter(c)},
                    {"precision", r.per_class[c].precision},
                    {"recall", r.per_class[c].recall},
                    {"f1", r.per_class[c].f1},
                    {"support", support}});
  }
  return rows;
}

inline json report_json(const training::EvalReport& r, const json& config) {
  return {{"fold_id", r.fold_id},         {"accuracy", r.accuracy},  {"total", r.total},
          {"confusion", r.confusion},     {"per_class", per_class_json(r)}, {"config", config}};
}

inline void write_report(const fs::path& dir, const training::EvalReport& r, const json& config) {
  write_json(dir / "eval_report.json", report_json(r, config));
  write_file(dir / "confusion.csv", confusion_csv(r));
}

// ---- shared flag groups ------------------------------------------------------

struct TrainFlags {
  std::string config_file, mode, loss, pos, neg, encoder, space, aggregation;
  std::size_t embed_dim = 0, length = 0, batch_size = 0, max_epochs = 0, patience = 0;
  double tau = 0, alpha = 0, lr = 0;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> opts;
  CLI::Option *o_mode{}, *o_loss{}, *o_pos{}, *o_neg{}, *o_encoder{}, *o_embed{}, *o_tau{}, *o_alpha{}, *o_seed{},
      *o_length{}, *o_batch{}, *o_epochs{}, *o_patience{}, *o_lr{}, *o_space{}, *o_agg{};

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "JSON file of dotted config keys");
    o_mode = app->add_option("--mode", mode, "user-dep | user-indep");
    o_loss = app->add_option("--loss", loss, "ce | npair | l2margin | cosmargin");
    o_pos = app->add_option("--pos", pos, "positive mining: easy | hard | semihard | all");
    o_neg = app->add_option("--neg", neg, "negative mining: easy | hard | semihard | all");
    o_space = app->add_option("--space", space, "mining distance space: unit | raw");
    o_encoder = app->add_option("--encoder", encoder, "cnn1d-bilstm | cnn1d | stacked-lstm | stacked-bilstm | cnn1d-lstm");
    o_embed = app->add_option("--embed-dim", embed_dim, "embedding dimension |E|");
    o_tau = app->add_option("--tau", tau, "NPair temperature");
    o_alpha = app->add_option("--alpha", alpha, "margin of the selected margin loss");
    o_agg = app->add_option("--aggregation", aggregation, "mean | sum over triplets");
    o_seed = app->add_option("--seed", seed, "random seed");
    o_length = app->add_option("--length", length, "model input length L");
    o_batch = app->add_option("--batch-size", batch_size, "mini-batch size");
    o_epochs = app->add_option("--max-epochs", max_epochs, "epoch limit per fold");
    o_patience = app->add_option("--patience", patience, "early-stopping patience in epochs");
    o_lr = app->add_option("--lr", lr, "Adam learning rate");
  }

  /// Defaults, then the config file, then explicit flags.
  config::RunConfig resolve(std::ostream& err) const {
    config::RunConfig c;
    if (!config_file.empty()) config::apply_file(c, config_file);
    auto& t = c.train;
    if (o_mode->count()) c.mode = training::parse_mode(mode);
    if (o_loss->count()) t.loss.variant = losses::parse_variant(loss);
    if (o_pos->count()) t.mining.positive = mining::parse_strategy(pos);
    if (o_neg->count()) t.mining.negative = mining::parse_strategy(neg);
    if (o_space->count()) t.mining.space = mining::parse_space(space);
    if (o_encoder->count()) t.encoder.kind = encoders::parse_kind(encoder);
    if (o_embed->count()) t.encoder.embedding_dim = embed_dim;
    if (o_tau->count()) t.loss.tau = tau;
    if (o_agg->count()) t.loss.aggregation = losses::parse_aggregation(aggregation);
    if (o_seed->count()) t.seed = seed;
    if (o_length->count()) t.encoder.input_length = length;
    if (o_batch->count()) t.batch_size = batch_size;
    if (o_epochs->count()) t.max_epochs = max_epochs;
    if (o_patience->count()) t.patience = patience;
    if (o_lr->count()) t.adam.lr = lr;
    if (o_alpha->count()) {
      if (t.loss.variant == losses::Variant::L2Margin) {
        t.loss.alpha_l2 = alpha;
      } else if (t.loss.variant == losses::Variant::CosineMargin) {
        t.loss.alpha_cos = alpha;
      } else {
        throw ConfigError("--alpha applies only to --loss l2margin or cosmargin");
      }
    }
    if (t.loss.variant == losses::Variant::CrossEntropyOnly && (o_pos->count() || o_neg->count())) {
      err << "warning: --loss ce trains without triplets; --pos/--neg are ignored\n";
    }
    return c;
  }
};

inline data::Dataset load_processed(const fs::path& root, config::RunConfig& c) {
  auto loaded = dataio::load_dataset(root);
  auto d = data::Dataset::from_recordings(loaded.recordings, config::preprocess_config(c));
  if (d.size() == 0) throw ConfigError("dataset " + root.string() + " holds no recordings");
  c.train.encoder.input_channels = d.channels;
  return d;
}

inline json keys_json(const std::vector<data::Key>& keys) {
  json a = json::array();
  for (const auto& k : keys) a.push_back({k.subject, k.repetition});
  return a;
}

inline std::vector<data::Key> keys_from_json(const json& a) {
  std::vector<data::Key> out;
  for (const auto& k : a) out.push_back({k.at(0).get<int>(), k.at(1).get<int>()});
  return out;
}

inline json plan_json(const training::FoldPlan& plan) {
  json folds = json::array();
  for (const auto& f : plan.folds) {
    folds.push_back({{"train", keys_json(f.train)}, {"val", keys_json(f.val)}, {"test", keys_json(f.test)}});
  }
  return {{"mode", std::string(training::to_string(plan.mode))}, {"folds", folds}};
}

/// Runs all folds and writes checkpoints, logs and reports below `out`.
inline training::ExperimentResult train_into(const fs::path& out, config::RunConfig c, const data::Dataset& d,
                                             std::ostream& log) {
  c.train.validate();
  const json echo = config::to_json(c);
  write_json(out / "resolved_config.json", echo);
  const auto plan = training::make_folds(d.keys(), c.mode, c.train.seed);
  write_json(out / "folds.json", plan_json(plan));
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    fs::create_directories(out / ("fold_" + std::to_string(f)));
    write_file(out / ("fold_" + std::to_string(f)) / "train_log.csv", kLogHeader);
  }
  auto fold_dir = [&](std::size_t f) { return out / ("fold_" + std::to_string(f)); };
  auto result = training::run_experiment(
      c.train, d, plan, training::thread_limit(),
      [&](const training::FoldOutcome& o) {
        dataio::save_checkpoint(o.training.params, fold_dir(o.fold_id) / "checkpoint.tfc", c.checkpoint_precision);
        write_report(fold_dir(o.fold_id), o.report, echo);
        log << "fold " << o.fold_id << ": test accuracy " << o.report.accuracy << " (best epoch "
            << o.training.best_epoch << ", " << o.training.log.size() << " epochs)\n";
      },
      [&](std::size_t f, const training::EpochLog& row) {
        std::ofstream(fold_dir(f) / "train_log.csv", std::ios::app) << log_row(row);
      });
  json accs = json::array();
  double var = 0.0;
  for (const auto& f : result.folds) {
    accs.push_back(f.report.accuracy);
    var += (f.report.accuracy - result.mean_accuracy) * (f.report.accuracy - result.mean_accuracy);
  }
  const double sd = std::sqrt(var / static_cast<double>(result.folds.size()));
  write_json(out / "summary.json", {{"mean_accuracy", result.mean_accuracy},
                                    {"std_accuracy", sd},
                                    {"fold_accuracies", accs},
                                    {"aggregate", report_json(result.aggregate, echo)}});
  write_file(out / "confusion_aggregate.csv", confusion_csv(result.aggregate));
  log << "mean accuracy " << result.mean_accuracy << " +/- " << sd << "\n";
  return result;
}

// ---- subcommands -------------------------------------------------------------

struct SynthArgs {
  std::string out, config_file;
  int subjects = 0, repetitions = 0, classes = 0;
  std::uint64_t seed = 0;
  double noise = 0, variability = 0;
  CLI::Option *o_subjects{}, *o_reps{}, *o_classes{}, *o_seed{}, *o_noise{}, *o_var{};
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  config::RunConfig c;
  if (!a.config_file.empty()) config::apply_file(c, a.config_file);
  if (a.o_subjects->count()) c.synth.n_subjects = a.subjects;
  if (a.o_reps->count()) c.synth.n_repetitions = a.repetitions;
  if (a.o_classes->count()) c.synth.classes = a.classes;
  if (a.o_seed->count()) c.synth.seed = a.seed;
  if (a.o_noise->count()) c.synth.noise_sigma = a.noise;
  if (a.o_var->count()) c.synth.subject_variability = a.variability;
  c.synth.validate();
  fresh_directory(a.out);
  auto recs = dataio::generate_synthetic(c.synth);
  dataio::save_dataset(a.out, recs, dataio::channel_names());
  write_json(fs::path(a.out) / "resolved_config.json", config::to_json(c));
  out << "wrote " << recs.size() << " recordings to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, out;
  TrainFlags flags;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  auto c = a.flags.resolve(err);
  c.train.validate();
  auto d = load_processed(a.data, c);
  fresh_directory(a.out);
  try {
    train_into(a.out, c, d, out);
  } catch (const training::FoldDiverged& e) {
    err << "error: " << e.what() << "\nlog: " << (fs::path(a.out) / ("fold_" + std::to_string(e.fold)) / "train_log.csv").string()
        << "\n";
    return kNumericalError;
  }
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "all", out, config_file;
};

/// Sample selection for eval: all | subjects=1,2 | reps=9,10 | FOLDS.json:K:train|val|test
inline std::vector<std::size_t> select_split(const data::Dataset& d, const std::string& spec) {
  auto numbers = [&](const std::string& list) {
    std::set<int> out;
    std::stringstream ss(list);
    for (std::string tok; std::getline(ss, tok, ',');) {
      int v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || p != tok.data() + tok.size()) throw ConfigError("bad number '" + tok + "' in --split");
      out.insert(v);
    }
    return out;
  };
  std::vector<data::Key> keys;
  if (spec == "all") {
    keys = d.keys();
  } else if (spec.rfind("subjects=", 0) == 0 || spec.rfind("reps=", 0) == 0) {
    const bool by_subject = spec[0] == 's';
    auto wanted = numbers(spec.substr(spec.find('=') + 1));
    for (const auto& k : d.keys()) {
      if (wanted.count(by_subject ? k.subject : k.repetition)) keys.push_back(k);
    }
  } else {
    const auto last = spec.rfind(':'), mid = spec.rfind(':', last == std::string::npos ? 0 : last - 1);
    if (last == std::string::npos || mid == std::string::npos || mid == 0) {
      throw ConfigError("--split must be all, subjects=LIST, reps=LIST or FOLDS.json:K:train|val|test");
    }
    const std::string file = spec.substr(0, mid), part = spec.substr(last + 1);
    const std::size_t k = static_cast<std::size_t>(*numbers(spec.substr(mid + 1, last - mid - 1)).begin());
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read fold file " + file);
    json plan;
    try {
      plan = json::parse(in);
      keys = keys_from_json(plan.at("folds").at(k).at(part));
    } catch (const json::exception& e) {
      throw ConfigError("fold file " + file + ": " + e.what());
    }
  }
  auto idx = d.select(keys);
  if (idx.empty()) throw ConfigError("--split " + spec + " selects no samples");
  return idx;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  config::RunConfig c;
  if (!a.config_file.empty()) config::apply_file(c, a.config_file);
  auto ck = dataio::load_checkpoint(a.checkpoint);
  c.train.encoder = ck.params.spec;
  auto d = load_processed(a.data, c);
  if (d.channels != ck.params.spec.input_channels) {
    throw ConfigError("checkpoint expects " + std::to_string(ck.params.spec.input_channels) +
                      " channels, dataset has " + std::to_string(d.channels));
  }
  const auto idx = select_split(d, a.split);
  auto report = training::evaluate(ck.params, d, idx);
  const fs::path dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "eval" : fs::path(a.out);
  fs::create_directories(dir);
  json echo = config::to_json(c);
  echo["eval.checkpoint"] = a.checkpoint;
  echo["eval.data"] = a.data;
  echo["eval.split"] = a.split;
  write_json(dir / "resolved_config.json", echo);
  write_report(dir, report, echo);
  write_json(dir / "per_class.json", per_class_json(report));
  out << "accuracy " << report.accuracy << " (" << report.total << " samples)\n";
  return kOk;
}

struct MineArgs {
  std::string embeddings, pos = "semihard", neg = "hard", space = "unit", out;
};

inline int cmd_mine_bench(const MineArgs& a, std::ostream& out) {
  mining::MiningPolicy policy{mining::parse_strategy(a.pos), mining::parse_strategy(a.neg), mining::parse_space(a.space)};
  std::ifstream in(a.embeddings);
  if (!in) throw ConfigError("cannot read embeddings file " + a.embeddings);
  std::vector<int> labels;
  std::vector<double> values;
  std::size_t dim = 0, line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
    int label = 0;
    auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), label);
    if (ec != std::errc{} || p != f[0].data() + f[0].size()) {
      if (labels.empty()) continue;  // header row
      throw ConfigError(a.embeddings + ":" + std::to_string(line_no) + ": bad label '" + f[0] + "'");
    }
    if (f.size() < 2) throw ConfigError(a.embeddings + ":" + std::to_string(line_no) + ": no embedding values");
    if (dim == 0) dim = f.size() - 1;
    if (f.size() - 1 != dim) {
      throw ConfigError(a.embeddings + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                        " values, got " + std::to_string(f.size() - 1));
    }
    for (std::size_t i = 1; i < f.size(); ++i) {
      double v = 0;
      auto [q, e2] = std::from_chars(f[i].data(), f[i].data() + f[i].size(), v);
      if (e2 != std::errc{} || q != f[i].data() + f[i].size()) {
        throw ConfigError(a.embeddings + ":" + std::to_string(line_no) + ": bad value '" + f[i] + "'");
      }
      values.push_back(v);
    }
    labels.push_back(label);
  }
  auto batch = mining::EmbeddingBatch::from_raw(std::move(values), labels, dim);
  auto set = mining::build_triplets(batch, policy);
  mining::DistanceMatrix dm(batch, policy.space);
  std::string dump = "anchor,positive,negative,d_ap,d_an,fallback_flag\n";
  double sum_ap = 0, sum_an = 0;
  std::size_t fallbacks = 0;
  for (const auto& t : set.triples) {
    const double ap = dm(t.anchor, t.positive), an = dm(t.anchor, t.negative);
    sum_ap += ap;
    sum_an += an;
    fallbacks += t.fallback;
    dump += std::to_string(t.anchor) + "," + std::to_string(t.positive) + "," + std::to_string(t.negative) + "," +
            exact(ap) + "," + exact(an) + "," + (t.fallback ? "1" : "0") + "\n";
  }
  const double n = static_cast<double>(set.size());
  std::size_t skipped = 0;
  for (const auto& r : set.anchors) skipped += r.status != mining::AnchorRecord::Status::Mined;
  json summary{{"triplets", set.size()},
               {"anchors_skipped", skipped},
               {"mean_d_ap", set.empty() ? 0.0 : sum_ap / n},
               {"mean_d_an", set.empty() ? 0.0 : sum_an / n},
               {"fallback_rate", set.empty() ? 0.0 : static_cast<double>(fallbacks) / n},
               {"positive", a.pos},
               {"negative", a.neg},
               {"space", a.space}};
  if (a.out.empty()) {
    out << dump;
    for (const auto& [k, v] : summary.items()) out << "# " << k << "=" << v.dump() << "\n";
  } else {
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "triplets.csv", dump);
    write_json(fs::path(a.out) / "summary.json", summary);
    json echo{{"mine.embeddings", a.embeddings}, {"mining.positive", a.pos}, {"mining.negative", a.neg},
              {"mining.space", a.space}};
    write_json(fs::path(a.out) / "resolved_config.json", echo);
    out << summary.dump() << "\n";
  }
  return kOk;
}

struct GradcheckArgs {
  std::string scope = "primitives", fault, out;
  std::size_t max_coordinates = 8;
  std::uint64_t seed = 7;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  gradcheck::SuiteOptions opt;
  opt.seed = a.seed;
  opt.max_coordinates = a.max_coordinates;
  std::vector<gradcheck::SuiteEntry> entries;
  struct FaultGuard {
    explicit FaultGuard(const std::string& op) { diff::testing::backward_fault() = op; }
    ~FaultGuard() { diff::testing::backward_fault().clear(); }
  } guard(a.fault);
  if (a.scope == "primitives") {
    entries = gradcheck::primitives_suite(opt);
  } else if (a.scope == "losses") {
    entries = gradcheck::losses_suite(opt);
  } else if (a.scope == "end2end") {
    entries = gradcheck::end2end_suite(opt);
  } else {
    throw ConfigError("unknown scope '" + a.scope + "' (primitives|losses|end2end)");
  }
  std::string csv = "check,max_rel_error,coordinates,status\n";
  std::size_t failed = 0;
  double worst = 0.0;
  for (const auto& e : entries) {
    const bool ok = std::isfinite(e.max_error) && e.max_error < kGradTolerance;
    worst = std::isfinite(e.max_error) ? std::max(worst, e.max_error) : INFINITY;
    failed += !ok;
    out << (ok ? "ok    " : "FAIL  ") << e.label << "  max_rel_error=" << e.max_error
        << "  coords=" << e.coordinates << "\n";
    if (!ok) err << "gradient check failed: " << e.label << " (max relative error " << e.max_error << ")\n";
    csv += e.label + "," + exact(e.max_error) + "," + std::to_string(e.coordinates) + "," + (ok ? "pass" : "fail") +
           "\n";
  }
  out << entries.size() << " checks, worst relative error " << worst << ": " << (failed ? "FAIL" : "PASS") << "\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_file(fs::path(a.out) / "gradcheck.csv", csv);
    write_json(fs::path(a.out) / "resolved_config.json",
               {{"gradcheck.scope", a.scope}, {"gradcheck.seed", a.seed}, {"gradcheck.max_coordinates", a.max_coordinates}});
  }
  return failed ? kCheckFailed : kOk;
}

struct SweepArgs {
  std::string data, out, taus = "0.1,0.2,0.5,1.0", modes = "user-dep,user-indep";
  TrainFlags flags;
};

inline int cmd_sweep_tau(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  auto base = a.flags.resolve(err);
  if (a.flags.o_loss->count() && base.train.loss.variant != losses::Variant::NPair) {
    throw ConfigError("sweep-tau always trains with --loss npair");
  }
  base.train.loss.variant = losses::Variant::NPair;
  std::vector<double> taus;
  {
    std::stringstream ss(a.taus);
    for (std::string tok; std::getline(ss, tok, ',');) {
      double v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || p != tok.data() + tok.size() || !(v > 0)) throw ConfigError("bad tau '" + tok + "'");
      taus.push_back(v);
    }
  }
  std::vector<training::Mode> modes;
  {
    std::stringstream ss(a.modes);
    for (std::string tok; std::getline(ss, tok, ',');) modes.push_back(training::parse_mode(tok));
  }
  if (taus.empty() || modes.empty()) throw ConfigError("sweep-tau needs at least one tau and one mode");
  base.train.validate();
  auto d = load_processed(a.data, base);
  fresh_directory(a.out);
  write_json(fs::path(a.out) / "resolved_config.json", config::to_json(base));
  for (auto mode : modes) {
    std::string csv = "tau,mean_accuracy\n";
    for (double tau : taus) {
      auto c = base;
      c.mode = mode;
      c.train.loss.tau = tau;
      const fs::path run = fs::path(a.out) / (std::string(training::to_string(mode)) + "_tau_" + exact(tau));
      fs::create_directories(run);
      out << "== " << training::to_string(mode) << " tau=" << tau << "\n";
      try {
        auto res = train_into(run, c, d, out);
        csv += exact(tau) + "," + exact(res.mean_accuracy) + "\n";
      } catch (const training::FoldDiverged& e) {
        err << "error: " << e.what() << "\nlog: " << (run / ("fold_" + std::to_string(e.fold)) / "train_log.csv").string()
            << "\n";
        return kNumericalError;
      }
    }
    write_file(fs::path(a.out) / ("sweep_" + std::string(training::to_string(mode)) + ".csv"), csv);
  }
  return kOk;
}

// ---- entry point ---------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"tripletforge: triplet + cross-entropy training for multichannel time series"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset tree");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--config", synth.config_file, "JSON file of dotted config keys");
  synth.o_subjects = s->add_option("--subjects", synth.subjects, "number of subjects");
  synth.o_reps = s->add_option("--repetitions", synth.repetitions, "repetitions per subject");
  synth.o_classes = s->add_option("--classes", synth.classes, "letters per repetition (<= 26)");
  synth.o_seed = s->add_option("--seed", synth.seed, "random seed");
  synth.o_noise = s->add_option("--noise", synth.noise, "Gaussian noise sigma");
  synth.o_var = s->add_option("--variability", synth.variability, "subject variability");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "5-fold training and evaluation");
  t->add_option("--data", train.data, "dataset directory")->required();
  t->add_option("--out", train.out, "output directory")->required();
  train.flags.add(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--split", ev.split, "all | subjects=LIST | reps=LIST | FOLDS.json:K:train|val|test");
  e->add_option("--out", ev.out, "report directory (default: <checkpoint dir>/eval)");
  e->add_option("--config", ev.config_file, "JSON file of dotted config keys");

  MineArgs mine;
  auto* m = app.add_subcommand("mine-bench", "mine triplets from an embeddings CSV");
  m->add_option("--embeddings", mine.embeddings, "CSV rows: label, then |E| values")->required();
  m->add_option("--pos", mine.pos, "easy | hard | semihard | all");
  m->add_option("--neg", mine.neg, "easy | hard | semihard | all");
  m->add_option("--space", mine.space, "unit | raw");
  m->add_option("--out", mine.out, "output directory (default: print to stdout)");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  g->add_option("--scope", gc.scope, "primitives | losses | end2end");
  g->add_option("--seed", gc.seed, "random seed");
  g->add_option("--max-coordinates", gc.max_coordinates, "checked coordinates per tensor (end2end)");
  g->add_option("--out", gc.out, "write gradcheck.csv here");
  g->add_option("--inject-fault", gc.fault, "")->group("");

  SweepArgs sweep;
  auto* w = app.add_subcommand("sweep-tau", "NPair accuracy across temperatures");
  w->add_option("--data", sweep.data, "dataset directory")->required();
  w->add_option("--out", sweep.out, "output directory")->required();
  w->add_option("--taus", sweep.taus, "comma-separated temperatures");
  w->add_option("--modes", sweep.modes, "comma-separated evaluation modes");
  sweep.flags.add(w);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) {
      app.exit(ex, out, err);
      return kOk;
    }
    err << "error: " << ex.what() << "\n";
    return kConfigError;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(train, out, err);
    if (*e) return cmd_eval(ev, out);
    if (*m) return cmd_mine_bench(mine, out);
    if (*g) return cmd_gradcheck(gc, out, err);
    if (*w) return cmd_sweep_tau(sweep, out, err);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kConfigError;
  } catch (const IoError& ex) {
    err << "error: " << ex.what() << "\n";
    return kConfigError;
  } catch (const ShapeError& ex) {
    err << "error: " << ex.what() << "\n";
    return kConfigError;
  } catch (const NumericalError& ex) {
    err << "error: " << ex.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return kInternalError;
  }
  return kConfigError;
}

}  // namespace tforge::cli
