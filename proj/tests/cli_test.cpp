#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(POHAR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("pohar_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kScenario = std::string(POHAR_SCENARIO_DIR) + "/two_room.json";

}  // namespace

TEST(Cli, GenerateIsDeterministic) {
  auto a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(run("generate --scenario " + kScenario + " --seed 3 --out-dir " + a.string()), 0);
  ASSERT_EQ(run("generate --scenario " + kScenario + " --seed 3 --out-dir " + b.string()), 0);
  EXPECT_EQ(slurp(a / "measurements.csv"), slurp(b / "measurements.csv"));
  EXPECT_EQ(slurp(a / "dataset.csv"), slurp(b / "dataset.csv"));
  EXPECT_FALSE(slurp(a / "dataset.csv").empty());
}

TEST(Cli, TrainSingleTreeForestMatchesTree) {
  auto dir = scratch("train");
  ASSERT_EQ(run("generate --scenario " + kScenario + " --variants 20 --out-dir " + dir.string()), 0);
  auto ds = (dir / "dataset.csv").string();
  ASSERT_EQ(run("train --dataset " + ds + " --kind tree --out " + (dir / "t.bin").string()), 0);
  ASSERT_EQ(run("train --dataset " + ds + " --kind forest --trees 1 --out " + (dir / "f.bin").string()), 0);
  std::string t = slurp(dir / "t.bin"), f = slurp(dir / "f.bin");
  ASSERT_GT(t.size(), 11u);
  // Same payload after the kind byte.
  EXPECT_EQ(t.substr(11), f.substr(11));
}

TEST(Cli, SimulateWritesOutputs) {
  auto dir = scratch("sim");
  ASSERT_EQ(run("simulate --scenario " + kScenario + " --drop 0.1 --out-dir " + dir.string()), 0);
  for (const char* f : {"trace.csv", "rounds.jsonl", "summary.csv", "recoveries.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "trace.csv").rfind("time_us,src,dst,kind,size_bytes,dropped_flag\n", 0), 0u);
}

TEST(Cli, ErrorExitCodes) {
  auto dir = scratch("err");
  std::ofstream(dir / "bad.csv") << "f0,label\nnot-a-number,x\n";
  EXPECT_EQ(run("train --dataset " + (dir / "bad.csv").string()), 2);
  EXPECT_EQ(run("simulate --scenario " + kScenario + " --drop 1.5 --out-dir " + dir.string()), 1);
  EXPECT_EQ(run("simulate --scenario " + kScenario + " --model " + (dir / "missing.bin").string()), 1);
  EXPECT_EQ(run("simulate --scenario " + kScenario + " --duration 10 --out-dir " + dir.string()), 3);
  EXPECT_EQ(run("bogus"), 1);
  std::ofstream(dir / "bad.json") << "{\"rooms\": []}";
  EXPECT_EQ(run("simulate --scenario " + (dir / "bad.json").string()), 1);
}
