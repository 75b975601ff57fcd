#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "commands.hpp"
#include "config.hpp"
#include "support/csv_reader.hpp"
#include "support/tempdir.hpp"
#include "uatmc/csv.hpp"
#include "uatmc/errors.hpp"

using namespace uatmc;
using namespace uatmc::cli;
using uatmc::testing::read_csv;
using uatmc::testing::slurp;
using uatmc::testing::TempDir;

namespace {

const std::vector<std::string> kTiny = {
    "synth.users=60",          "synth.items=50",           "synth.latent_dim=4",
    "synth.dim_v=8",           "synth.dim_t=8",            "synth.min_interactions=4",
    "synth.max_interactions=8", "synth.unpopular_count=10", "synth.unpopular_interactions=3",
    "model.dim=8",             "model.fuse_dim=6",         "train.max_epochs=2",
    "train.batch_size=32",     "defense.max_epochs=2",     "defense.batch_size=32",
    "attack.targets=10",       "attack.popularity_threshold=3", "attack.pgd_steps=3",
    "attack.k=10",             "eval.k_hit=10",            "diagnose.targets=5",
    "bench.batches=3",         "bench.batch_size=16",      "bench.warmup=1",
};

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "uatmc");
  args.push_back("-q");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// Subcommand with the tiny config and any extra overrides.
int run_tiny(const std::string& cmd, const std::vector<std::string>& extra, const std::vector<std::string>& sets = {}) {
  std::vector<std::string> args{cmd};
  args.insert(args.end(), extra.begin(), extra.end());
  for (const auto& s : kTiny) {
    args.push_back("--set");
    args.push_back(s);
  }
  for (const auto& s : sets) {
    args.push_back("--set");
    args.push_back(s);
  }
  return run(args);
}

// Shared dataset and pretrained checkpoint for the command tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    ASSERT_EQ(run_tiny("gen-data", {"-o", data().string()}), 0);
    ASSERT_EQ(run_tiny("train", {"-o", pre().string()}, {"data.path=" + data().string()}), 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::filesystem::path data() { return *dir_ / "data"; }
  static std::filesystem::path pre() { return *dir_ / "pre"; }
  static std::filesystem::path ckpt() { return pre() / "model.uatm"; }
  static std::string data_set() { return "data.path=" + data().string(); }
  static std::filesystem::path out(const std::string& name) { return *dir_ / name; }

  static TempDir* dir_;
};
TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST(Config, UnknownKeyIsRejected) {
  auto c = Config::defaults();
  EXPECT_THROW(c.set("defense.lamda=3"), ConfigError);
  EXPECT_THROW(c.merge_json(nlohmann::json{{"model", {{"dimm", 4}}}}), ConfigError);
  EXPECT_THROW(c.set("no_equals_sign"), ConfigError);
}

TEST(Config, SetParsesByType) {
  auto c = Config::defaults();
  c.set("defense.lambda=3");
  c.set("model.dim=16");
  c.set("attack.with_align=true");
  c.set("model.kind=graph");
  c.set("sweep.eps_a=0.1,0.2");
  EXPECT_EQ(c.get_double("defense.lambda"), 3.0);
  EXPECT_EQ(c.get_int("model.dim"), 16);
  EXPECT_TRUE(c.get_bool("attack.with_align"));
  EXPECT_EQ(c.get_string("model.kind"), "graph");
  EXPECT_EQ(c.get_list("sweep.eps_a"), (std::vector<double>{0.1, 0.2}));
  EXPECT_THROW(c.set("model.dim=abc"), ConfigError);
  EXPECT_THROW(c.set("attack.with_align=maybe"), ConfigError);
}

TEST(Config, NestedJsonFlattensAndFlagsOverrideFile) {
  TempDir dir;
  std::ofstream(dir / "c.json") << R"({"defense": {"lambda": 4, "alpha": 0.5}, "seed": 7})";
  const auto c = load_config(dir / "c.json", {"defense.alpha=2"});
  EXPECT_EQ(c.get_double("defense.lambda"), 4.0);
  EXPECT_EQ(c.get_double("defense.alpha"), 2.0);
  EXPECT_EQ(c.get_int("seed"), 7);
}

TEST(Config, AttackKMustMatchEvalHit) {
  auto c = Config::defaults();
  c.set("attack.k=20");
  EXPECT_THROW(attack_config(c), ConfigError);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run({"gen-data", "-o", (dir / "a").string(), "--set", "bogus.key=1"}), 2);
  EXPECT_EQ(run({"gen-data", "-o", (dir / "a").string(), "--set", "synth.users=0"}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"train", "-o", (dir / "b").string(), "--set", "data.path=" + (dir / "missing").string()}), 3);
  std::ofstream(dir / "broken.uatm") << "not a checkpoint";
  ASSERT_EQ(run_tiny("gen-data", {"-o", (dir / "d").string()}), 0);
  EXPECT_EQ(run_tiny("attack", {"-o", (dir / "c").string(), "--checkpoint", (dir / "broken.uatm").string()},
                     {"data.path=" + (dir / "d").string()}),
            3);
}

TEST(Cli, GenDataOutputsAndStats) {
  TempDir dir;
  ASSERT_EQ(run_tiny("gen-data", {"-o", (dir / "a").string()}), 0);
  for (const char* f : {"interactions.tsv", "visual.mmfe", "textual.mmfe", "stats.json", "manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / f)) << f;
  }
  const auto stats = nlohmann::json::parse(slurp(dir / "a" / "stats.json"));
  std::ifstream tsv(dir / "a" / "interactions.tsv");
  std::size_t lines = 0;
  for (std::string l; std::getline(tsv, l);)
    if (!l.empty() && l[0] != '#') ++lines;
  EXPECT_EQ(stats["users"], 60);
  EXPECT_EQ(stats["items"], 50);
  EXPECT_EQ(stats["interactions"], lines);
  const double expect = (1.0 - static_cast<double>(lines) / (60.0 * 50.0)) * 100.0;
  EXPECT_NEAR(stats["sparsity_pct"].get<double>(), expect, 1e-3);
}

TEST(Cli, GenDataSameSeedSameBytes) {
  TempDir dir;
  ASSERT_EQ(run_tiny("gen-data", {"-o", (dir / "a").string()}), 0);
  ASSERT_EQ(run_tiny("gen-data", {"-o", (dir / "b").string()}), 0);
  ASSERT_EQ(run_tiny("gen-data", {"-o", (dir / "c").string()}, {"seed=43"}), 0);
  for (const char* f : {"interactions.tsv", "visual.mmfe", "textual.mmfe", "stats.json", "manifest.json"}) {
    EXPECT_EQ(sha256_file(dir / "a" / f), sha256_file(dir / "b" / f)) << f;
  }
  EXPECT_NE(sha256_file(dir / "a" / "visual.mmfe"), sha256_file(dir / "c" / "visual.mmfe"));
}

TEST(Cli, UnwritableOutputIsDataError) {
  TempDir dir;
  std::ofstream(dir / "file") << "x";
  EXPECT_EQ(run_tiny("gen-data", {"-o", (dir / "file" / "sub").string()}), 3);
}

TEST_F(CliPipeline, TrainWritesCheckpointLogAndManifest) {
  EXPECT_TRUE(std::filesystem::exists(ckpt()));
  EXPECT_TRUE(verify_csv_checksum(pre() / "train_log.csv"));
  const auto log = read_csv(pre() / "train_log.csv");
  EXPECT_EQ(log.rows.size(), 2u);
  const auto man = nlohmann::json::parse(slurp(pre() / "manifest.json"));
  EXPECT_EQ(man["command"], "train");
  EXPECT_EQ(man["run_id"].get<std::string>().size(), 16u);
  EXPECT_TRUE(man["inputs"].size() >= 3);
  EXPECT_TRUE(man["outputs"].contains("model.uatm"));
}

TEST_F(CliPipeline, DefendAlignColumnByMode) {
  ASSERT_EQ(run_tiny("defend", {"-o", out("mc").string(), "--checkpoint", ckpt().string()}, {data_set()}), 0);
  ASSERT_EQ(run_tiny("defend", {"-o", out("uat").string(), "--checkpoint", ckpt().string()},
                     {data_set(), "defense.mode=uat"}),
            0);
  const auto mc = read_csv(out("mc") / "train_log.csv");
  const auto uat = read_csv(out("uat") / "train_log.csv");
  bool any_nonzero = false;
  for (const auto& r : mc.rows) any_nonzero |= std::stod(r[mc.col("align_mean")]) != 0.0;
  EXPECT_TRUE(any_nonzero);
  for (const auto& r : uat.rows) EXPECT_EQ(std::stod(r[uat.col("align_mean")]), 0.0);
}

TEST_F(CliPipeline, ResumeContinuesEpochNumbering) {
  ASSERT_EQ(run_tiny("defend", {"-o", out("r1").string(), "--checkpoint", ckpt().string()}, {data_set()}), 0);
  ASSERT_EQ(run_tiny("defend",
                     {"-o", out("r2").string(), "--checkpoint", ckpt().string(), "--resume",
                      (out("r1") / "model.uatm").string()},
                     {data_set(), "defense.max_epochs=4"}),
            0);
  const auto log = read_csv(out("r2") / "train_log.csv");
  ASSERT_EQ(log.rows.size(), 2u);
  EXPECT_EQ(log.rows[0][log.col("epoch")], "3");
  EXPECT_EQ(log.rows[1][log.col("epoch")], "4");

  ASSERT_EQ(run_tiny("train", {"-o", out("t2").string(), "--resume", ckpt().string()},
                     {data_set(), "train.max_epochs=3"}),
            0);
  const auto tlog = read_csv(out("t2") / "train_log.csv");
  ASSERT_EQ(tlog.rows.size(), 1u);
  EXPECT_EQ(tlog.rows[0][0], "3");
}

TEST_F(CliPipeline, AttackRowsAndTrace) {
  ASSERT_EQ(run_tiny("attack", {"-o", out("pgd").string(), "--checkpoint", ckpt().string()}, {data_set()}), 0);
  const auto a = read_csv(out("pgd") / "attack.csv");
  ASSERT_EQ(a.rows.size(), 11u);
  EXPECT_EQ(a.rows.back()[0], "mean");
  const auto t = read_csv(out("pgd") / "trace.csv");
  EXPECT_EQ(t.rows.size(), 10u * 3u);
  const auto m = read_csv(out("pgd") / "metrics.csv");
  EXPECT_EQ(m.rows.size(), 1u);
  for (const char* f : {"attack.csv", "trace.csv", "metrics.csv"}) EXPECT_TRUE(verify_csv_checksum(out("pgd") / f));

  ASSERT_EQ(run_tiny("attack", {"-o", out("fgsm").string(), "--checkpoint", ckpt().string()},
                     {data_set(), "attack.variant=fgsm"}),
            0);
  EXPECT_EQ(read_csv(out("fgsm") / "trace.csv").rows.size(), 10u);
}

TEST_F(CliPipeline, DiagnoseCounts) {
  ASSERT_EQ(run_tiny("diagnose", {"-o", out("diag").string(), "--checkpoint", ckpt().string()}, {data_set()}), 0);
  const auto items = read_csv(out("diag") / "mismatch_items.csv");
  const auto hist = read_csv(out("diag") / "mismatch_hist.csv");
  const auto users = read_csv(out("diag") / "mismatch_users.csv");
  const auto skipped = read_csv(out("diag") / "mismatch_skipped.csv");
  EXPECT_EQ(items.rows.size() + skipped.rows.size(), 5u);
  std::size_t total = 0;
  for (const auto& r : hist.rows) total += std::stoul(r[hist.col("count")]);
  EXPECT_EQ(total, items.rows.size());
  // Every target's pool is all users without a training interaction.
  std::size_t expected_users = 0;
  const auto c = [&] {
    auto cfg = Config::defaults();
    for (const auto& s : kTiny) cfg.set(s);
    cfg.set(data_set());
    return cfg;
  }();
  const auto d = load_dataset(c);
  for (const auto& r : items.rows) {
    const std::size_t item = std::stoul(r[0]);
    std::size_t seen = 0;
    for (std::size_t u = 0; u < d.split.num_users; ++u) seen += d.split.in_train(u, item) ? 1 : 0;
    expected_users += d.split.num_users - seen;
  }
  EXPECT_EQ(users.rows.size(), expected_users);

  ASSERT_EQ(run_tiny("diagnose", {"-o", out("diag2").string(), "--checkpoint", ckpt().string()}, {data_set()}), 0);
  for (const char* f : {"mismatch_items.csv", "mismatch_hist.csv", "mismatch_users.csv", "mismatch_skipped.csv"}) {
    EXPECT_EQ(slurp(out("diag") / f), slurp(out("diag2") / f)) << f;
  }
}

TEST_F(CliPipeline, SweepGridShapes) {
  const std::vector<std::string> fast = {data_set(), "defense.max_epochs=1", "attack.targets=3",
                                         "attack.pgd_steps=2"};
  auto with = [&](std::string s) {
    auto v = fast;
    v.push_back(std::move(s));
    return v;
  };
  ASSERT_EQ(run_tiny("sweep", {"-o", out("se").string(), "--checkpoint", ckpt().string()}, fast), 0);
  const auto eps = read_csv(out("se") / "sweep.csv");
  EXPECT_EQ(eps.rows.size(), 16u);
  EXPECT_EQ(eps.header[0], "eps_d");
  EXPECT_EQ(eps.header[1], "eps_a");
  EXPECT_EQ(eps.header[2], "gain");

  ASSERT_EQ(run_tiny("sweep", {"-o", out("sl").string(), "--checkpoint", ckpt().string()}, with("sweep.kind=lambda")),
            0);
  const auto lam = read_csv(out("sl") / "sweep.csv");
  EXPECT_EQ(lam.rows.size(), 10u);
  EXPECT_NO_THROW(lam.col("lambda"));
  EXPECT_NO_THROW(lam.col("ndcg10"));
  EXPECT_NO_THROW(lam.col("gain"));

  ASSERT_EQ(run_tiny("sweep", {"-o", out("sa").string(), "--checkpoint", ckpt().string()}, with("sweep.kind=alpha")),
            0);
  const auto al = read_csv(out("sa") / "sweep.csv");
  EXPECT_EQ(al.rows.size(), 11u);
  EXPECT_EQ(std::stod(al.rows[0][al.col("alpha")]), 0.1);
}

TEST_F(CliPipeline, BenchSummary) {
  ASSERT_EQ(run_tiny("bench", {"-o", out("bench").string()}), 0);
  const auto j = nlohmann::json::parse(slurp(out("bench") / "bench.json"));
  EXPECT_EQ(j["d"], 8);
  EXPECT_EQ(j["batch_size"], 16);
  EXPECT_TRUE(j.contains("uat_mc_over_uat"));
  for (const char* m : {"bpr", "uat", "uat_mc"}) EXPECT_GT(j["median_seconds"][m].get<double>(), 0.0);
  EXPECT_EQ(read_csv(out("bench") / "timing.csv").rows.size(), 9u);
}

TEST_F(CliPipeline, ReportMergesAndChecksChecksums) {
  ASSERT_EQ(run_tiny("attack", {"-o", out("ra").string(), "--checkpoint", ckpt().string()}, {data_set()}), 0);
  ASSERT_EQ(run_tiny("attack", {"-o", out("rb").string(), "--checkpoint", ckpt().string()},
                     {data_set(), "attack.variant=fgsm"}),
            0);
  ASSERT_EQ(run({"report", "-i", out("ra").string(), "-i", out("rb").string(), "-o", out("rep").string()}), 0);
  EXPECT_EQ(read_csv(out("rep") / "report.csv").rows.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(out("rep") / "report.md"));

  std::string body = slurp(out("rb") / "metrics.csv");
  body[body.find(',') + 1] ^= 1;
  std::ofstream(out("rb") / "metrics.csv", std::ios::binary) << body;
  EXPECT_EQ(run({"report", "-i", out("ra").string(), "-i", out("rb").string(), "-o", out("rep2").string()}), 3);
}

TEST_F(CliPipeline, DefendAndAttackAreByteDeterministic) {
  for (const char* name : {"d1", "d2"}) {
    ASSERT_EQ(run_tiny("defend", {"-o", out(name).string(), "--checkpoint", ckpt().string()}, {data_set()}), 0);
  }
  for (const char* f : {"model.uatm", "train_log.csv", "manifest.json"}) {
    EXPECT_EQ(sha256_file(out("d1") / f), sha256_file(out("d2") / f)) << f;
  }
  // Rerun the attack from its own manifest.
  ASSERT_EQ(run_tiny("attack", {"-o", out("a1").string(), "--checkpoint", (out("d1") / "model.uatm").string()},
                     {data_set()}),
            0);
  ASSERT_EQ(run({"attack", "-c", (out("a1") / "manifest.json").string(), "-o", out("a2").string(), "--checkpoint",
                 (out("d1") / "model.uatm").string()}),
            0);
  for (const char* f : {"attack.csv", "trace.csv", "metrics.csv", "manifest.json"}) {
    EXPECT_EQ(sha256_file(out("a1") / f), sha256_file(out("a2") / f)) << f;
  }
}
