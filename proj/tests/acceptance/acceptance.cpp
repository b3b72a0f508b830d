// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. `acceptance 3 6` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "cli.hpp"
#include "mining_oracle.hpp"
#include "tripletforge/runtime.hpp"

using namespace tforge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

fs::path scratch() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / ("tforge_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

int run_cli(std::vector<std::string> args, std::string* err_text = nullptr) {
  args.insert(args.begin(), "tripletforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// 1. Finite-difference gradient checks through every encoder and loss.
Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::string err;
  const fs::path out = scratch() / "gradcheck";
  const int code = run_cli({"gradcheck", "--scope", "end2end", "--out", out.string()}, &err);
  const double elapsed = seconds_since(t0);
  std::set<std::string> combos;
  double worst = 0.0;
  std::istringstream rows(slurp(out / "gradcheck.csv"));
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    const auto label = line.substr(0, line.find(','));
    combos.insert(label.substr(0, label.rfind('/')));
    const auto rest = line.substr(line.find(',') + 1);
    worst = std::max(worst, std::stod(rest.substr(0, rest.find(','))));
  }
  const bool pass = code == 0 && combos.size() == 20 && worst < 1e-4 && elapsed < 300.0;
  return {pass, "exit " + std::to_string(code) + ", " + std::to_string(combos.size()) +
                    " loss/encoder pairs, max rel error " + fmt(worst) + ", " + fmt(elapsed) + " s"};
}

// 2. Miner against the brute-force reference on random batches.
Verdict mining_oracle() {
  using mining::Strategy;
  std::mt19937_64 rng(20240);
  const Strategy all[] = {Strategy::Easy, Strategy::Hard, Strategy::Semihard, Strategy::All};
  std::size_t mismatches = 0, batches = 0;
  for (Strategy ps : all)
    for (Strategy ns : all)
      for (int trial = 0; trial < 200; ++trial) {
        auto b = oracle::random_batch(rng);
        mining::MiningPolicy policy{ps, ns, trial % 2 ? mining::Space::Raw : mining::Space::Unit};
        mismatches += mining::build_triplets(b, policy).triples != oracle::build(b, policy);
        ++batches;
      }
  return {mismatches == 0, std::to_string(batches) + " batches, " + std::to_string(mismatches) + " mismatches"};
}

// 3. Loss values at points with closed forms.
Verdict loss_closed_forms() {
  diff::Graph g(false);
  mining::TripletSet one;
  one.triples = {{0, 1, 2, false}};
  auto rows = [](std::vector<double> v) { return diff::Tensor({3, v.size() / 3}, v); };
  auto value = [](const std::optional<diff::Tensor>& t) { return t ? t->item() : NAN; };
  struct Case {
    std::string name;
    double got, want;
  };
  std::vector<int> labels{0, 3};
  std::vector<Case> cases{
      {"npair s_ap=s_an", value(losses::npair_triplet(g, one, rows({1, 0, 0, 1, 0, 1}), 0.2)), std::log(2.0)},
      {"npair s_ap=1 s_an=0 tau=0.2", value(losses::npair_triplet(g, one, rows({1, 0, 1, 0, 0, 1}), 0.2)),
       std::log1p(std::exp(-5.0))},
      {"l2 margin d_ap=d_an alpha=0.2", value(losses::l2_margin_triplet(g, one, rows({1, 0, 0, 1, 0, -1}), 0.2)),
       std::log1p(std::exp(0.2))},
      {"cosine margin s_ap=1 s_an=-1 alpha=0.1",
       value(losses::cosine_margin_triplet(g, one, rows({1, 0, 1, 0, -1, 0}), 0.1)), std::log1p(std::exp(-1.9))},
      {"cross entropy uniform 26", losses::cross_entropy(g, diff::Tensor::zeros({2, 26}), labels).item(),
       std::log(26.0)},
  };
  double worst = 0.0;
  std::string detail;
  for (const auto& c : cases) {
    const double err = std::abs(c.got - c.want);
    worst = std::isnan(err) ? INFINITY : std::max(worst, err);
    if (!(err <= 1e-9)) detail += c.name + " off by " + fmt(err) + "; ";
  }
  return {worst <= 1e-9, detail + std::to_string(cases.size()) + " closed forms, max abs error " + fmt(worst)};
}

// 4. Unit normalization. Rows whose norm exceeds the guard must come out with
// norm 1 ± 1e-6, down to norms just above it; rows at or below the guard
// (exact zeros included) must come out finite.
Verdict normalization() {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> log_scale(-11.0, 3.0);
  const std::size_t n = 1000, dim = 16;
  std::vector<double> raw(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    double s;
    if (i % 10 == 0) {
      s = std::pow(10.0, log_scale(rng) - 3.0);  // near zero: 1e-14 .. 1
    } else {
      s = std::pow(10.0, log_scale(rng));
    }
    if (i % 100 == 1) s = 0.0;
    double norm = 0.0;
    std::vector<double> dir(dim);
    for (auto& v : dir) v = nd(rng), norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < dim; ++k) raw[i * dim + k] = s * dir[k] / norm;
  }
  diff::Graph g(false);
  auto unit = losses::normalize_unit(g, diff::Tensor({n, dim}, raw)).values();
  std::size_t unit_rows = 0, guarded = 0, bad = 0;
  double worst = 0.0, smallest_unit = INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    double in = 0.0, out = 0.0;
    bool finite = true;
    for (std::size_t k = 0; k < dim; ++k) {
      in += raw[i * dim + k] * raw[i * dim + k];
      out += unit[i * dim + k] * unit[i * dim + k];
      finite = finite && std::isfinite(unit[i * dim + k]);
    }
    in = std::sqrt(in);
    out = std::sqrt(out);
    if (in > 1e-12) {
      ++unit_rows;
      smallest_unit = std::min(smallest_unit, in);
      worst = std::max(worst, std::abs(out - 1.0));
      bad += !(std::abs(out - 1.0) <= 1e-6) || !finite;
    } else {
      ++guarded;
      bad += !finite;
    }
  }
  return {bad == 0 && guarded > 0 && smallest_unit < 1e-10,
          std::to_string(unit_rows) + " rows above the guard (smallest norm " + fmt(smallest_unit) +
              ") with max |norm-1| " + fmt(worst) + ", " + std::to_string(guarded) + " guarded rows finite, " +
              std::to_string(bad) + " violations"};
}

// 5. Fold invariants over random dataset shapes.
Verdict folds() {
  std::mt19937_64 rng(55);
  std::size_t violations = 0;
  for (int shape = 0; shape < 100; ++shape) {
    const int subjects = std::uniform_int_distribution<int>(5, 50)(rng);
    std::set<int> ids;
    while (static_cast<int>(ids.size()) < subjects) ids.insert(std::uniform_int_distribution<int>(1, 500)(rng));
    std::vector<data::Key> keys;
    for (int s : ids)
      for (int r = 1; r <= 10; ++r) keys.push_back({s, r});
    const std::set<data::Key> universe(keys.begin(), keys.end());
    for (auto mode : {training::Mode::UserIndependent, training::Mode::UserDependent}) {
      auto plan = training::make_folds(keys, mode, rng());
      violations += plan.folds.size() != 5;
      std::map<data::Key, int> tested;
      for (const auto& f : plan.folds) {
        std::set<data::Key> seen;
        for (const auto* part : {&f.train, &f.val, &f.test})
          for (const auto& k : *part) violations += !seen.insert(k).second;
        violations += seen != universe;
        for (const auto& k : f.test) ++tested[k];
        auto subjects_of = [](const std::vector<data::Key>& v) {
          std::set<int> s;
          for (const auto& k : v) s.insert(k.subject);
          return s;
        };
        auto reps_of = [](const std::vector<data::Key>& v) {
          std::set<int> s;
          for (const auto& k : v) s.insert(k.repetition);
          return s;
        };
        if (mode == training::Mode::UserIndependent) {
          auto test_s = subjects_of(f.test);
          for (const auto* part : {&f.train, &f.val})
            for (int s : subjects_of(*part)) violations += test_s.count(s);
        } else {
          auto test_r = reps_of(f.test);
          violations += test_r.size() != 2;
          for (const auto* part : {&f.train, &f.val})
            for (int r : reps_of(*part)) violations += test_r.count(r);
          violations += subjects_of(f.test) != ids;
        }
      }
      for (const auto& k : keys) violations += tested[k] != 1;
    }
  }
  return {violations == 0, "100 shapes x 2 modes, " + std::to_string(violations) + " violations"};
}

// 6. Synthetic benchmark, CE-only vs NPair, through the CLI.
Verdict synthetic_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path data = scratch() / "synthetic_default";
  if (run_cli({"synth", "--out", data.string()}) != 0) return {false, "synth failed"};
  std::string err;
  const std::vector<std::string> common{"train",  "--data",   data.string(), "--mode",        "user-dep",
                                        "--encoder", "cnn1d-bilstm", "--length", "200", "--max-epochs", "30"};
  auto ce_args = common, np_args = common;
  ce_args.insert(ce_args.end(), {"--out", (scratch() / "ce").string(), "--loss", "ce"});
  np_args.insert(np_args.end(), {"--out", (scratch() / "npair").string(), "--loss", "npair", "--pos", "semihard",
                                 "--neg", "hard", "--tau", "0.2", "--embed-dim", "64"});
  const int ce_code = run_cli(ce_args, &err);
  if (ce_code != 0) return {false, "CE run exited " + std::to_string(ce_code) + ": " + err};
  const double ce_time = seconds_since(t0);
  const int np_code = run_cli(np_args, &err);
  const double total = seconds_since(t0);
  if (np_code != 0) return {false, "NPair run exited " + std::to_string(np_code) + ": " + err};
  const double ce = json::parse(slurp(scratch() / "ce" / "summary.json"))["mean_accuracy"];
  const double np = json::parse(slurp(scratch() / "npair" / "summary.json"))["mean_accuracy"];
  const bool pass = ce >= 0.90 && np >= ce - 0.02 && total <= 1800.0;
  return {pass, "CE mean acc " + fmt(ce) + ", NPair mean acc " + fmt(np) + ", runtime " + fmt(total) + " s (CE " +
                    fmt(ce_time) + " s)"};
}

std::vector<std::string> small_train(const fs::path& data, const fs::path& out, const std::string& loss) {
  return {"train", "--data", data.string(), "--out", out.string(), "--length", "200", "--embed-dim", "32",
          "--max-epochs", "1", "--seed", "11", "--loss", loss};
}

fs::path small_dataset() {
  const fs::path data = scratch() / "synthetic_small";
  if (!fs::exists(data)) run_cli({"synth", "--out", data.string(), "--subjects", "2", "--seed", "5"});
  return data;
}

// 7. The triplet term adds no parameters.
Verdict checkpoint_sizes() {
  const auto data = small_dataset();
  if (run_cli(small_train(data, scratch() / "size_ce", "ce")) != 0) return {false, "CE run failed"};
  if (run_cli(small_train(data, scratch() / "size_np", "npair")) != 0) return {false, "NPair run failed"};
  std::size_t same = 0;
  std::string sizes;
  for (int f = 0; f < 5; ++f) {
    const auto name = "fold_" + std::to_string(f);
    const auto a = fs::file_size(scratch() / "size_ce" / name / "checkpoint.tfc");
    const auto b = fs::file_size(scratch() / "size_np" / name / "checkpoint.tfc");
    same += a == b;
    if (f == 0) sizes = std::to_string(a) + " vs " + std::to_string(b) + " bytes";
  }
  return {same == 5, std::to_string(same) + "/5 folds equal size (" + sizes + ")"};
}

// 8. Two identical runs give identical epoch-1 log rows (wall-clock column excluded).
Verdict determinism() {
  const auto data = small_dataset();
  if (run_cli(small_train(data, scratch() / "det_a", "npair")) != 0) return {false, "first run failed"};
  if (run_cli(small_train(data, scratch() / "det_b", "npair")) != 0) return {false, "second run failed"};
  auto row = [](const fs::path& log) {
    std::istringstream in(slurp(log));
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    return first.substr(0, first.rfind(','));
  };
  std::size_t equal = 0;
  std::string sample;
  for (int f = 0; f < 5; ++f) {
    const auto name = "fold_" + std::to_string(f);
    const auto a = row(scratch() / "det_a" / name / "train_log.csv");
    const auto b = row(scratch() / "det_b" / name / "train_log.csv");
    equal += !a.empty() && a == b;
    if (f == 0) sample = a;
  }
  return {equal == 5, std::to_string(equal) + "/5 folds identical; fold 0 row " + sample};
}

// 9. Metrics recomputed from the emitted confusion matrix.
Verdict metric_identities() {
  std::mt19937_64 rng(99);
  std::size_t mismatches = 0, degenerate_seen = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = std::uniform_int_distribution<std::size_t>(2, 26)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 300)(rng);
    std::uniform_int_distribution<int> cls(0, static_cast<int>(classes) - 1);
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = cls(rng);
      pred[i] = rng() % 3 == 0 ? truth[i] : cls(rng);
    }
    const auto emitted = cli::report_json(training::make_report(truth, pred, classes), json::object());
    const auto m = emitted["confusion"].get<std::vector<std::vector<std::size_t>>>();
    std::size_t diag = 0, total = 0;
    for (std::size_t i = 0; i < classes; ++i)
      for (std::size_t j = 0; j < classes; ++j) total += m[i][j], diag += i == j ? m[i][j] : 0;
    mismatches += emitted["accuracy"].get<double>() != static_cast<double>(diag) / static_cast<double>(total);
    for (std::size_t c = 0; c < classes; ++c) {
      std::size_t tp = m[c][c], col = 0, row = 0;
      for (std::size_t k = 0; k < classes; ++k) col += m[k][c], row += m[c][k];
      const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
      const double r = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
      const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
      const auto& pc = emitted["per_class"][c];
      mismatches += pc["precision"].get<double>() != p;
      mismatches += pc["recall"].get<double>() != r;
      mismatches += pc["f1"].get<double>() != f1;
      if (p + r == 0.0) {
        ++degenerate_seen;
        mismatches += pc["f1"].get<double>() != 0.0;
      }
    }
  }
  return {mismatches == 0 && degenerate_seen > 0, "100 sets, " + std::to_string(mismatches) + " mismatches, " +
                                                      std::to_string(degenerate_seen) + " degenerate F1 cases"};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradients},          {"mining oracle equivalence", mining_oracle},
      {"loss closed forms", loss_closed_forms},     {"normalization invariant", normalization},
      {"fold integrity", folds},                    {"synthetic end-to-end", synthetic_end_to_end},
      {"zero-parameter overhead", checkpoint_sizes}, {"determinism", determinism},
      {"metric identities", metric_identities},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  bool all_pass = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && !only.count(k + 1)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << k + 1 << ". " << criteria[k].first << ": " << v.detail
              << std::endl;
  }
  fs::remove_all(scratch());
  return all_pass ? 0 : 1;
}
