#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"

using namespace tforge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "tripletforge");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = tforge::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

// One scratch directory and one small synthetic dataset shared by the suite.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("tforge_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    auto r = invoke({"synth", "--out", (root_ / "data").string(), "--subjects", "2", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path dir(const std::string& name) { return root_ / name; }
  static std::string data() { return (root_ / "data").string(); }

  static std::vector<std::string> small_train(const std::string& out, const std::string& epochs = "3",
                                              const std::string& embed = "16") {
    return {"train", "--data", data(), "--out", dir(out).string(), "--encoder", "cnn1d", "--length", "81",
            "--embed-dim", embed, "--max-epochs", epochs, "--batch-size", "52"};
  }

  static inline fs::path root_;
};

}  // namespace

TEST_F(CliTest, SynthIsDeterministic) {
  auto a = invoke({"synth", "--out", dir("s1").string(), "--subjects", "2", "--seed", "7", "--classes", "3"});
  auto b = invoke({"synth", "--out", dir("s2").string(), "--subjects", "2", "--seed", "7", "--classes", "3"});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  auto ta = tree(dir("s1")), tb = tree(dir("s2"));
  EXPECT_EQ(ta.size(), 2u * 10u * 3u + 2u);
  EXPECT_EQ(ta, tb);
  EXPECT_TRUE(ta.count("resolved_config.json"));
  EXPECT_TRUE(ta.count("manifest.json"));
}

TEST_F(CliTest, SynthRejectsBadConfig) {
  EXPECT_EQ(invoke({"synth", "--out", dir("s3").string(), "--subjects", "0"}).code, 2);
  EXPECT_EQ(invoke({"synth", "--out", dir("s4").string(), "--noise", "-1"}).code, 2);
  EXPECT_EQ(invoke({"synth"}).code, 2);
}

TEST_F(CliTest, TrainWritesFoldArtifacts) {
  auto r = invoke(small_train("t1"));
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path out = dir("t1");
  auto summary = read_json(out / "summary.json");
  double mean = 0.0;
  for (int f = 0; f < 5; ++f) {
    const fs::path fold = out / ("fold_" + std::to_string(f));
    ASSERT_TRUE(fs::exists(fold / "checkpoint.tfc"));
    ASSERT_TRUE(fs::exists(fold / "confusion.csv"));
    auto report = read_json(fold / "eval_report.json");
    EXPECT_EQ(report["fold_id"], f);
    EXPECT_EQ(report["per_class"].size(), 26u);
    mean += report["accuracy"].get<double>();
    EXPECT_EQ(summary["fold_accuracies"][f], report["accuracy"]);

    auto log = lines(slurp(fold / "train_log.csv"));
    ASSERT_GE(log.size(), 2u);
    EXPECT_EQ(log[0], "epoch,train_total,train_triplet,train_ce,triplet_count,val_accuracy,wallclock_s");
    EXPECT_LE(log.size(), 4u);
    EXPECT_EQ(log[1].substr(0, 2), "1,");
  }
  EXPECT_NEAR(summary["mean_accuracy"].get<double>(), mean / 5.0, 1e-12);
  EXPECT_EQ(read_json(out / "folds.json")["folds"].size(), 5u);
  EXPECT_TRUE(fs::exists(out / "confusion_aggregate.csv"));
  EXPECT_EQ(summary["aggregate"]["total"], 520);
}

TEST_F(CliTest, FlagsOverrideFileOverrideDefaults) {
  const fs::path cfg = dir("cfg.json");
  std::ofstream(cfg) << R"({"loss.tau": 0.7, "encoder.embedding_dim": 12, "train.patience": 4})";
  auto args = small_train("t2", "1", "16");
  args.insert(args.end(), {"--config", cfg.string()});
  auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json(dir("t2") / "resolved_config.json");
  EXPECT_EQ(j["loss.tau"], 0.7);                 // file
  EXPECT_EQ(j["encoder.embedding_dim"], 16);     // flag beats file
  EXPECT_EQ(j["train.patience"], 4);             // file
  EXPECT_EQ(j["train.lr"], 1e-3);                // default
  EXPECT_EQ(j["train.max_epochs"], 1);           // flag
  EXPECT_EQ(j["encoder.input_channels"], nullptr);
}

TEST_F(CliTest, CrossEntropyWithMiningFlagsWarns) {
  auto args = small_train("t3", "1");
  args.insert(args.end(), {"--loss", "ce", "--pos", "hard"});
  auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST_F(CliTest, TrainRejectsBadInput) {
  auto r = invoke(small_train("t1_again"));
  ASSERT_EQ(r.code, 0);
  r = invoke(small_train("t1_again"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("not empty"), std::string::npos);

  auto args = small_train("t4");
  args.insert(args.end(), {"--loss", "contrastive"});
  EXPECT_EQ(invoke(args).code, 2);
  args = small_train("t5");
  args.insert(args.end(), {"--loss", "npair", "--alpha", "0.5"});
  EXPECT_EQ(invoke(args).code, 2);
  EXPECT_EQ(invoke({"train", "--data", dir("nowhere").string(), "--out", dir("t6").string()}).code, 2);
  EXPECT_EQ(invoke({"train", "--data", data()}).code, 2);
  EXPECT_EQ(invoke({"bogus"}).code, 2);
}

TEST_F(CliTest, DivergenceExitsWithNumericalErrorAndNamesTheLog) {
  auto args = small_train("t7", "5");
  args.insert(args.end(), {"--lr", "1e300"});
  auto r = invoke(args);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("train_log.csv"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvalOnOwnTrainingFoldIsAtLeastTestAccuracy) {
  auto r = invoke(small_train("t8"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto folds = (dir("t8") / "folds.json").string();
  const auto ck = (dir("t8") / "fold_0" / "checkpoint.tfc").string();
  auto test = invoke({"eval", "--checkpoint", ck, "--data", data(), "--split", folds + ":0:test", "--out",
                   dir("e_test").string()});
  auto train = invoke({"eval", "--checkpoint", ck, "--data", data(), "--split", folds + ":0:train", "--out",
                    dir("e_train").string()});
  ASSERT_EQ(test.code, 0) << test.err;
  ASSERT_EQ(train.code, 0) << train.err;
  const double test_acc = read_json(dir("e_test") / "eval_report.json")["accuracy"];
  const double train_acc = read_json(dir("e_train") / "eval_report.json")["accuracy"];
  EXPECT_GE(train_acc, test_acc);
  // The fold report written by training saw the same float32-rounded weights.
  EXPECT_EQ(test_acc, read_json(dir("t8") / "fold_0" / "eval_report.json")["accuracy"].get<double>());
  EXPECT_TRUE(fs::exists(dir("e_test") / "per_class.json"));
  EXPECT_TRUE(fs::exists(dir("e_test") / "confusion.csv"));
  EXPECT_TRUE(fs::exists(dir("e_test") / "resolved_config.json"));

  auto subj = invoke({"eval", "--checkpoint", ck, "--data", data(), "--split", "subjects=2", "--out",
                   dir("e_subj").string()});
  ASSERT_EQ(subj.code, 0) << subj.err;
  EXPECT_EQ(read_json(dir("e_subj") / "eval_report.json")["total"], 260);

  EXPECT_EQ(invoke({"eval", "--checkpoint", ck, "--data", data(), "--split", "subjects=9"}).code, 2);
  EXPECT_EQ(invoke({"eval", "--checkpoint", ck, "--data", data(), "--split", "reps=x"}).code, 2);
  EXPECT_EQ(invoke({"eval", "--checkpoint", ck, "--data", data(), "--split", "nonsense"}).code, 2);
  EXPECT_EQ(invoke({"eval", "--checkpoint", dir("missing.tfc").string(), "--data", data()}).code, 2);
}

TEST_F(CliTest, MineBenchDumpMatchesItsSummary) {
  const fs::path emb = dir("emb.csv");
  {
    std::ofstream f(emb);
    f << "label,e0,e1\n";
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 15; ++i) f << i % 3 << "," << nd(rng) + i % 3 << "," << nd(rng) << "\n";
  }
  auto r = invoke({"mine-bench", "--embeddings", emb.string(), "--pos", "hard", "--neg", "semihard", "--out",
                dir("mb").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = lines(slurp(dir("mb") / "triplets.csv"));
  ASSERT_EQ(rows[0], "anchor,positive,negative,d_ap,d_an,fallback_flag");
  auto summary = read_json(dir("mb") / "summary.json");
  ASSERT_EQ(summary["triplets"], rows.size() - 1);
  EXPECT_EQ(rows.size() - 1, 15u);
  double ap = 0, an = 0, fb = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> f;
    std::istringstream ss(rows[i]);
    for (std::string t; std::getline(ss, t, ',');) f.push_back(t);
    ASSERT_EQ(f.size(), 6u);
    EXPECT_EQ(std::stoi(f[0]) % 3, std::stoi(f[1]) % 3);
    EXPECT_NE(std::stoi(f[0]) % 3, std::stoi(f[2]) % 3);
    ap += std::stod(f[3]);
    an += std::stod(f[4]);
    fb += std::stod(f[5]);
  }
  const double n = static_cast<double>(rows.size() - 1);
  EXPECT_NEAR(summary["mean_d_ap"].get<double>(), ap / n, 1e-12);
  EXPECT_NEAR(summary["mean_d_an"].get<double>(), an / n, 1e-12);
  EXPECT_NEAR(summary["fallback_rate"].get<double>(), fb / n, 1e-12);

  std::ofstream(dir("bad_emb.csv")) << "0,1,2\n1,1\n";
  EXPECT_EQ(invoke({"mine-bench", "--embeddings", dir("bad_emb.csv").string()}).code, 2);
  EXPECT_EQ(invoke({"mine-bench", "--embeddings", emb.string(), "--pos", "random"}).code, 2);
}

TEST_F(CliTest, GradcheckPassesAndCatchesInjectedFault) {
  auto ok = invoke({"gradcheck", "--scope", "primitives"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  auto bad = invoke({"gradcheck", "--scope", "primitives", "--inject-fault", "matmul"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("matmul"), std::string::npos);
  // The fault does not leak into later runs.
  EXPECT_EQ(invoke({"gradcheck", "--scope", "losses"}).code, 0);
  EXPECT_EQ(invoke({"gradcheck", "--scope", "everything"}).code, 2);
}

TEST_F(CliTest, SweepTauWritesOneRowPerTau) {
  auto r = invoke({"sweep-tau", "--data", data(), "--out", dir("sw").string(), "--taus", "0.1,0.2,0.5,1.0", "--modes",
                "user-dep", "--encoder", "cnn1d", "--length", "81", "--embed-dim", "8", "--max-epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = lines(slurp(dir("sw") / "sweep_user-dep.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "tau,mean_accuracy");
  EXPECT_EQ(rows[1].substr(0, 4), "0.1,");
  EXPECT_EQ(rows[4].substr(0, 2), "1,");
  EXPECT_EQ(invoke({"sweep-tau", "--data", data(), "--out", dir("sw2").string(), "--taus", "0,-1"}).code, 2);
}
