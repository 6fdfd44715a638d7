#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "mmrep_cli_test";

const char* kSmall =
    " --set corpus.n_products=800 --set corpus.n_queries=300 --set corpus.categories=12"
    " --set corpus.category_families=3 --set interactions.n_pairs=6000 --set ctr.n_users=100";

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args) {
  const fs::path log = kWork / "last.log";
  const std::string cmd = std::string(MMREP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
  std::string dir(const std::string& name) const { return (kWork / name).string(); }
};

}  // namespace

TEST_F(Cli, GenDataIsReproducible) {
  ASSERT_EQ(run("gen-data" + std::string(kSmall) + " --out " + dir("a")).code, 0);
  ASSERT_EQ(run("gen-data" + std::string(kSmall) + " --out " + dir("b")).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir("a"))) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(dir("b")) / fs::relative(e.path(), dir("a")))) << e.path();
  }
  EXPECT_GT(files, 3u);
  ASSERT_EQ(run("gen-data" + std::string(kSmall) + " --seed 8 --out " + dir("c")).code, 0);
  EXPECT_NE(slurp(fs::path(dir("a")) / "corpus/products.jsonl"), slurp(fs::path(dir("c")) / "corpus/products.jsonl"));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen-data --no-such-flag").code, 2);
  EXPECT_EQ(run("gen-data --set no.such.key=1").code, 2);
  EXPECT_EQ(run("sweep --axis tokens --out " + dir("bad_sweep")).code, 2);
  EXPECT_FALSE(fs::exists(dir("bad_sweep")));
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, MissingDirectoryExitsThree) {
  const Result r = run("curate --data " + dir("does-not-exist") + " --out " + dir("cur"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("io"), std::string::npos);
}

TEST_F(Cli, HelpListsFlagsWithDefaults) {
  const Result r = run("train --help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--seed UINT [7]"), std::string::npos);
  EXPECT_NE(r.out.find("stage2.queue_depth = 5"), std::string::npos);
  EXPECT_NE(r.out.find("--out TEXT [model]"), std::string::npos);
}

TEST_F(Cli, ExchangeRateCommand) {
  const Result r = run("exchange-rate --baseline-metric 0.50 --baseline-auc 0.700 --treatment-metric 0.51 "
                       "--treatment-auc 0.701 --out " + dir("xr/rate.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(slurp(dir("xr/rate.csv")).find("1.000000"), std::string::npos);
  EXPECT_EQ(run("exchange-rate --baseline-metric 0.5 --baseline-auc 0.7 --treatment-metric 0.5 "
                "--treatment-auc 0.8").code, 1);
}

TEST_F(Cli, DeltaRoundTripAndStaleRejection) {
  ASSERT_EQ(run("center ingest --records 200 --dim 8 --out " + dir("s/v1.snap")).code, 0);
  ASSERT_EQ(run("center ingest --seed 9 --records 100 --base " + dir("s/v1.snap") + " --out " + dir("s/v2.snap")).code,
            0);
  ASSERT_EQ(run("center delta --base " + dir("s/v1.snap") + " --target " + dir("s/v2.snap") + " --out " +
                dir("s/d.delta")).code, 0);
  const Result applied =
      run("center delta --base " + dir("s/v1.snap") + " --apply " + dir("s/d.delta") + " --out " + dir("s/v2b.snap"));
  ASSERT_EQ(applied.code, 0) << applied.out;
  // Applying the same delta again targets a version the table already passed.
  const Result stale =
      run("center delta --base " + dir("s/v2b.snap") + " --apply " + dir("s/d.delta") + " --out " + dir("s/x.snap"));
  EXPECT_EQ(stale.code, 1);
  EXPECT_NE(stale.out.find("stale"), std::string::npos) << stale.out;
  EXPECT_EQ(run("center snapshot --in " + dir("s/v2b.snap")).code, 0);
  EXPECT_EQ(run("center snapshot --in " + dir("s/missing.snap")).code, 3);
}

TEST_F(Cli, BenchReportsThroughputAndTail) {
  const Result r = run("center bench --ops 20000");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("ops/sec"), std::string::npos);
  EXPECT_NE(r.out.find("p99"), std::string::npos);
}

TEST_F(Cli, StageByStagePipeline) {
  const std::string s = std::string(kSmall) + " --set stage1.steps=20 --set stage2.steps=20";
  const std::string d = dir("p/data"), cur = dir("p/cur"), model = dir("p/model"), center = dir("p/center");
  ASSERT_EQ(run("gen-data" + s + " --out " + d).code, 0);
  ASSERT_EQ(run("curate" + s + " --data " + d + " --out " + cur).code, 0);
  Result r = run("train" + s + " --data " + d + " --triplets " + cur + "/triplets.jsonl --out " + model);
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("export-embeddings" + s + " --data " + d + " --checkpoint " + model + "/encoder.ckpt --out " + center);
  ASSERT_EQ(r.code, 0) << r.out;
  r = run("eval-recall" + s + " --data " + d + " --checkpoint " + model + "/encoder.ckpt --table " + center +
          "/embeddings.snap --k 1,10 --out " + dir("p/eval"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("R@10"), std::string::npos) << r.out;
  r = run("train-ctr" + s + " --data " + d + " --checkpoint " + model + "/encoder.ckpt --table " + center +
          "/embeddings.snap --out " + dir("p/ctr"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("AUC"), std::string::npos) << r.out;
}
