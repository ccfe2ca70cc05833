#include <gtest/gtest.h>

#include <sstream>

#include "mmaffect/cli.hpp"
#include "test_util.hpp"

using namespace mmaffect;
using testing_util::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "mmaffect");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

constexpr const char* kTinyConfig =
    "d_model=8\nn_layers=1\nn_heads=2\nhead_hidden=8\nsegment_length=32\nbatch_size=4\nlr=0.001\nepochs=2\n";

}  // namespace

TEST(Cli, NoArgumentsIsUsageError) {
  const Outcome o = run({});
  EXPECT_EQ(o.code, cli::kExitUsage);
  EXPECT_NE(o.err.find("gen-synthetic"), std::string::npos);
  EXPECT_TRUE(o.out.empty());
}

TEST(Cli, BadFlagsAreUsageErrors) {
  EXPECT_EQ(run({"train"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"gen-synthetic", "--task", "dance", "--out", "x"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"fly"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
}

TEST(Cli, MissingInputsAreRuntimeErrors) {
  TempDir dir("cli_missing");
  const Outcome o = run({"eval", "--task", "va", "--data", dir.path().string(), "--checkpoint",
                         (dir / "none.mmck").string()});
  EXPECT_EQ(o.code, cli::kExitRuntime);
  EXPECT_NE(o.err.find("Io"), std::string::npos) << o.err;
}

TEST(Cli, GenerateTrainEvalPredict) {
  TempDir dir("cli_flow");
  const std::string data = (dir / "data").string(), run_dir = (dir / "run").string(), pred = (dir / "pred").string();
  io::write_file(dir / "tiny.cfg", kTinyConfig);

  Outcome o = run({"gen-synthetic", "--task", "va", "--videos", "5", "--t-min", "40", "--t-max", "70", "--seed", "3",
                   "--out", data});
  ASSERT_EQ(o.code, 0) << o.err;

  o = run({"train", "--task", "va", "--data", data, "--config", (dir / "tiny.cfg").string(), "--out", run_dir});
  ASSERT_EQ(o.code, 0) << o.err;
  const std::string log = io::read_file(io::fs::path(run_dir) / "metrics.log");
  EXPECT_EQ(count_lines(log), 2u);
  EXPECT_EQ(log.rfind("epoch=1 train_loss=", 0), 0u) << log;
  EXPECT_NE(log.find("val_mean_ccc="), std::string::npos) << log;
  const std::string ck = (io::fs::path(run_dir) / "latest.mmck").string();
  ASSERT_TRUE(io::fs::exists(ck));

  o = run({"eval", "--task", "va", "--data", data, "--checkpoint", ck});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out.rfind("task=va\nmetric=mean_ccc\n", 0), 0u) << o.out;

  o = run({"predict", "--task", "va", "--data", data, "--checkpoint", ck, "--out", pred});
  ASSERT_EQ(o.code, 0) << o.err;
  const Dataset loaded = io::load_dataset(data, Task::VA);
  ASSERT_FALSE(loaded.val.empty());
  for (const auto& v : loaded.val) {
    const std::string csv = io::read_file(io::fs::path(pred) / (v.id + ".csv"));
    EXPECT_EQ(count_lines(csv), v.frames()) << v.id;
    EXPECT_EQ(csv.rfind("0,", 0), 0u);
    const std::string first = csv.substr(0, csv.find('\n'));
    EXPECT_EQ(std::count(first.begin(), first.end(), ','), 2);
  }
}

TEST(Cli, IdenticalInvocationsGiveIdenticalArtifacts) {
  TempDir dir("cli_repeat");
  io::write_file(dir / "tiny.cfg", kTinyConfig);
  const std::string data = (dir / "data").string(), out = (dir / "run").string();
  std::vector<std::string> logs, checkpoints, stdouts;
  for (int round = 0; round < 2; ++round) {
    io::fs::remove_all(data);
    io::fs::remove_all(out);
    ASSERT_EQ(run({"gen-synthetic", "--task", "au", "--videos", "5", "--t-min", "40", "--t-max", "60", "--out", data})
                  .code,
              0);
    const Outcome o = run({"train", "--task", "au", "--data", data, "--config", (dir / "tiny.cfg").string(), "--out", out});
    ASSERT_EQ(o.code, 0) << o.err;
    stdouts.push_back(o.out);
    logs.push_back(io::read_file(io::fs::path(out) / "metrics.log"));
    checkpoints.push_back(io::read_file(io::fs::path(out) / "latest.mmck"));
  }
  EXPECT_EQ(stdouts[0], stdouts[1]);
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(checkpoints[0], checkpoints[1]);
}

TEST(Cli, ResumeAppendsToTheLog) {
  TempDir dir("cli_resume");
  const std::string data = (dir / "data").string(), out = (dir / "run").string();
  io::write_file(dir / "tiny.cfg", kTinyConfig);
  io::write_file(dir / "longer.cfg", std::string(kTinyConfig) + "epochs=3\n");
  ASSERT_EQ(run({"gen-synthetic", "--task", "expr", "--videos", "5", "--t-min", "40", "--t-max", "60", "--out", data})
                .code,
            0);
  ASSERT_EQ(run({"train", "--task", "expr", "--data", data, "--config", (dir / "tiny.cfg").string(), "--out", out}).code,
            0);
  const std::string ck = (io::fs::path(out) / "latest.mmck").string();
  const Outcome o = run({"train", "--task", "expr", "--data", data, "--config", (dir / "longer.cfg").string(), "--out",
                         out, "--checkpoint", ck});
  ASSERT_EQ(o.code, 0) << o.err;
  const std::string log = io::read_file(io::fs::path(out) / "metrics.log");
  EXPECT_EQ(count_lines(log), 3u) << log;
  EXPECT_NE(log.find("epoch=3 "), std::string::npos);
  EXPECT_EQ(load_checkpoint(ck).epoch, 3u);
}

TEST(Cli, TaskMismatchIsReported) {
  TempDir dir("cli_mismatch");
  const std::string data = (dir / "data").string(), out = (dir / "run").string();
  io::write_file(dir / "tiny.cfg", kTinyConfig);
  ASSERT_EQ(run({"gen-synthetic", "--task", "va", "--videos", "5", "--t-min", "40", "--t-max", "60", "--out", data})
                .code,
            0);
  Outcome o = run({"train", "--task", "expr", "--data", data, "--config", (dir / "tiny.cfg").string(), "--out", out});
  EXPECT_EQ(o.code, cli::kExitRuntime);
  EXPECT_NE(o.err.find("TaskMismatch"), std::string::npos) << o.err;

  io::write_file(dir / "au.cfg", std::string(kTinyConfig) + "task=au\n");
  o = run({"train", "--task", "va", "--data", data, "--config", (dir / "au.cfg").string(), "--out", out});
  EXPECT_EQ(o.code, cli::kExitRuntime);
  EXPECT_NE(o.err.find("TaskMismatch"), std::string::npos) << o.err;

  ASSERT_EQ(run({"train", "--task", "va", "--data", data, "--config", (dir / "tiny.cfg").string(), "--out", out}).code, 0);
  ASSERT_EQ(run({"gen-synthetic", "--task", "expr", "--videos", "5", "--t-min", "40", "--t-max", "60", "--out", data})
                .code,
            0);
  o = run({"eval", "--task", "expr", "--data", data, "--checkpoint", (io::fs::path(out) / "latest.mmck").string()});
  EXPECT_EQ(o.code, cli::kExitRuntime);
  EXPECT_NE(o.err.find("TaskMismatch"), std::string::npos) << o.err;
}

TEST(Cli, EriPredictRepeatsTheVideoVector) {
  TempDir dir("cli_eri");
  const std::string data = (dir / "data").string(), out = (dir / "run").string(), pred = (dir / "pred").string();
  io::write_file(dir / "tiny.cfg", std::string(kTinyConfig) + "epochs=1\n");
  ASSERT_EQ(run({"gen-synthetic", "--task", "eri", "--videos", "6", "--out", data}).code, 0);
  ASSERT_EQ(run({"train", "--task", "eri", "--data", data, "--config", (dir / "tiny.cfg").string(), "--out", out}).code, 0);
  const Outcome o = run({"predict", "--task", "eri", "--data", data, "--checkpoint",
                         (io::fs::path(out) / "latest.mmck").string(), "--out", pred, "--split", "train"});
  ASSERT_EQ(o.code, 0) << o.err;
  const Dataset loaded = io::load_dataset(data, Task::ERI);
  const auto& v = loaded.train.front();
  std::istringstream csv(io::read_file(io::fs::path(pred) / (v.id + ".csv")));
  std::string line, first_values;
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    const std::string values = line.substr(line.find(',') + 1);
    if (rows == 0) first_values = values;
    EXPECT_EQ(values, first_values);
    ++rows;
  }
  EXPECT_EQ(rows, v.frames());
  EXPECT_EQ(std::count(first_values.begin(), first_values.end(), ','), 6);
}
