#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

fs::path kWork;

int run(const std::string& args) {
  const std::string cmd = std::string(AVB_CLI_PATH) + " " + args + " >" + (kWork / "stdout.txt").string() +
                          " 2>" + (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

std::string w(const std::string& name) { return (kWork / name).string(); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    kWork = fs::temp_directory_path() / "avb_test_cli" /
            ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_F(Cli, SimulateLogregShape) {
  ASSERT_EQ(run("simulate --kind logreg --n 900 --d 50 --seed 1 --out " + w("lr")), 0);
  EXPECT_EQ(count_lines(kWork / "lr" / "data.csv"), 901u);
  std::ifstream in(kWork / "lr" / "data.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 50);
  EXPECT_TRUE(fs::exists(kWork / "lr" / "manifest.json"));
}

TEST_F(Cli, SimulateSessionsShapeAndDeterminism) {
  ASSERT_EQ(run("simulate --kind sessions --u 200 --u-test 100 --p 1000 --seed 2 --out " + w("s1")), 0);
  ASSERT_EQ(run("simulate --kind sessions --u 200 --u-test 100 --p 1000 --seed 2 --out " + w("s2")), 0);
  EXPECT_EQ(count_lines(kWork / "s1" / "train.jsonl") + count_lines(kWork / "s1" / "test.jsonl"), 300u);
  const auto manifest = nlohmann::json::parse(slurp(kWork / "s1" / "train.manifest.json"));
  EXPECT_EQ(manifest["P"], 1000);
  EXPECT_EQ(slurp(kWork / "s1" / "train.jsonl"), slurp(kWork / "s2" / "train.jsonl"));
  EXPECT_EQ(slurp(kWork / "s1" / "test.jsonl"), slurp(kWork / "s2" / "test.jsonl"));
}

TEST_F(Cli, TrainLogregModels) {
  ASSERT_EQ(run("simulate --kind logreg --n 200 --n-test 100 --d 3 --seed 3 --out " + w("small")), 0);
  for (const std::string model : {"jj", "vbem", "lrt"}) {
    const std::string args = "train --model " + model + " --data " + w("small/data.csv") +
                             " --epochs 5 --batch-size 20 --max-iters 20 --seed 4 --checkpoint-out " +
                             w(model + ".ckpt.json") + " --trace-out " + w(model + ".trace.csv");
    ASSERT_EQ(run(args), 0) << model << slurp(kWork / "stderr.txt");
    const std::string first = slurp(kWork / (model + ".ckpt.json"));
    ASSERT_EQ(run(args), 0);
    EXPECT_EQ(slurp(kWork / (model + ".ckpt.json")), first) << model;
    ASSERT_EQ(run("eval --checkpoint " + w(model + ".ckpt.json") + " --test-data " + w("small/test.csv") +
                  " --out " + w(model + ".eval.json")),
              0);
    const auto j = nlohmann::json::parse(slurp(kWork / (model + ".eval.json")));
    EXPECT_GT(j["accuracy"].get<double>(), 0.5) << model;
  }
  std::ifstream trace(kWork / "jj.trace.csv");
  std::string header;
  std::getline(trace, header);
  EXPECT_EQ(header, "epoch,bound,kl_term,lik_term,wall_ms");
}

TEST_F(Cli, TrainLvmNegativesAtCatalogSizeMatchesFull) {
  ASSERT_EQ(run("simulate --kind sessions --u 60 --u-test 30 --p 20 --seed 5 --out " + w("sess")), 0);
  const std::string base = "train --model lvm --data " + w("sess/train.jsonl") + " --k 2 --epochs 3 --seed 6";
  ASSERT_EQ(run(base + " --negatives 0 --trace-out " + w("full.csv") + " --checkpoint-out " + w("lvm.ckpt.json")), 0);
  ASSERT_EQ(run(base + " --negatives 20 --trace-out " + w("all.csv")), 0);
  EXPECT_EQ(slurp(kWork / "full.csv"), slurp(kWork / "all.csv"));
  ASSERT_EQ(run(base + " --negatives 5 --trace-out " + w("ns.csv")), 0);
  EXPECT_EQ(count_lines(kWork / "ns.csv"), 5u);

  const std::string eval = "eval --checkpoint " + w("lvm.ckpt.json") + " --test-data " + w("sess/test.jsonl");
  ASSERT_EQ(run(eval + " --out " + w("e1.json")), 0);
  ASSERT_EQ(run(eval + " --out " + w("e2.json")), 0);
  EXPECT_EQ(slurp(kWork / "e1.json"), slurp(kWork / "e2.json"));
  const auto j = nlohmann::json::parse(slurp(kWork / "e1.json"));
  EXPECT_TRUE(j.contains("recall_at_5"));
  EXPECT_TRUE(j.contains("tdcg_at_5"));

  ASSERT_EQ(run("eval --baseline pop --train-data " + w("sess/train.jsonl") + " --test-data " +
                w("sess/test.jsonl") + " --out " + w("pop.json")),
            0);
}

TEST_F(Cli, CatalogMismatchIsAnError) {
  ASSERT_EQ(run("simulate --kind sessions --u 20 --u-test 10 --p 15 --seed 7 --out " + w("other")), 0);
  ASSERT_EQ(run("simulate --kind sessions --u 20 --u-test 10 --p 12 --seed 7 --out " + w("mine")), 0);
  ASSERT_EQ(run("train --model lvm --data " + w("mine/train.jsonl") + " --k 1 --epochs 1 --checkpoint-out " +
                w("mine.ckpt.json")),
            0);
  EXPECT_EQ(run("eval --checkpoint " + w("mine.ckpt.json") + " --test-data " + w("other/test.jsonl")), 1);
  EXPECT_NE(slurp(kWork / "stderr.txt").find("catalog"), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("verify --suite bounds --out " + w("verify.json")), 0);
  EXPECT_TRUE(nlohmann::json::parse(slurp(kWork / "verify.json"))["passed"].get<bool>());
  EXPECT_EQ(run("train --model nope --data x.csv"), 1);
  EXPECT_EQ(run("train --model jj --data " + w("does_not_exist.csv")), 3);
  std::ofstream(kWork / "bad.csv") << "y,x0\n1,2\n7,1\n";
  EXPECT_EQ(run("train --model jj --data " + w("bad.csv")), 1);
  EXPECT_NE(slurp(kWork / "stderr.txt").find("line 3"), std::string::npos);
  EXPECT_EQ(run("simulate --kind logreg --n 0 --out " + w("zero")), 1);
}
