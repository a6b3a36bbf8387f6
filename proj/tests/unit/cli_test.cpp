// Copyright 2026 The MMChange Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "mmchange/metrics.hpp"
#include "mmchange/visualize.hpp"
#include "test_util.hpp"

namespace mmchange {
namespace {

namespace fs = std::filesystem;

int run(const std::string& args, std::string* output = nullptr) {
  const auto log = fs::temp_directory_path() / "mmchange_cli_output.txt";
  const std::string cmd = std::string(MMCHANGE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    *output = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

const char* kTinyModel = "--set widths=4,8,8,16 --set embed_dim=8 --set batch_size=2";

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gen-data --out /tmp/x"), 2);  // --count missing
  EXPECT_EQ(run("gradcheck --module decoder"), 2);
  EXPECT_EQ(run("gradcheck --module tde --dims 4x4"), 2);
  EXPECT_EQ(run("gen-data --count 1 --size 48 --out " + testing::scratch_dir("cli_bad").string()), 2);
}

TEST(Cli, HelpExitsWithZero) {
  std::string out;
  EXPECT_EQ(run("--help", &out), 0);
  EXPECT_NE(out.find("gen-data"), std::string::npos);
  EXPECT_NE(out.find("ablate"), std::string::npos);
}

TEST(Cli, ConflictingAblationFlagsAreReported) {
  const auto dir = testing::scratch_dir("cli_conflict");
  ASSERT_EQ(run("gen-data --count 2 --size 32 --seed 1 --out " + (dir / "data").string()), 0);
  std::string out;
  EXPECT_EQ(run("train --data " + (dir / "data").string() + " --out " + (dir / "run").string() +
                    " --image-only --no-tde",
                &out),
            2);
  EXPECT_NE(out.find("--image-only"), std::string::npos);
}

TEST(Cli, GenDataSeedFallsBackToTheEnvironment) {
  const auto a = testing::scratch_dir("cli_seed_a"), b = testing::scratch_dir("cli_seed_b");
  ASSERT_EQ(run("gen-data --count 2 --size 32 --seed 5 --out " + a.string()), 0);
  ASSERT_EQ(setenv("MMCHANGE_SEED", "5", 1), 0);
  const int rc = run("gen-data --count 2 --size 32 --out " + b.string());
  unsetenv("MMCHANGE_SEED");
  ASSERT_EQ(rc, 0);
  EXPECT_EQ(slurp(a / "A" / "00001.png"), slurp(b / "A" / "00001.png"));
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
}

TEST(Cli, ZeroCountDatasetIsValid) {
  const auto dir = testing::scratch_dir("cli_empty");
  EXPECT_EQ(run("gen-data --count 0 --out " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(Cli, GradcheckReportsPass) {
  std::string out;
  EXPECT_EQ(run("gradcheck --module tde", &out), 0);
  EXPECT_NE(out.find("PASS"), std::string::npos);
}

class CliWorkflow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::scratch_dir("cli_flow");
    ASSERT_EQ(run("gen-data --count 4 --size 32 --seed 3 --out " + (dir_ / "data").string()), 0);
    std::string out;
    ASSERT_EQ(run("train --data " + data() + " --eval-data " + data() + " --out " + (dir_ / "run").string() +
                      " --seed 2 --set max_iteration=3 --set eval_interval=2 " + kTinyModel,
                  &out),
              0)
        << out;
  }
  static std::string data() { return (dir_ / "data").string(); }
  static std::string ckpt() { return (dir_ / "run" / "checkpoint.bin").string(); }
  static inline fs::path dir_;
};

TEST_F(CliWorkflow, TrainWritesLogAndCheckpoint) {
  auto lines = lines_of(dir_ / "run" / "train.log");
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0].rfind("0\t0.0005\t", 0), 0u);
  EXPECT_EQ(lines[2].rfind("EVAL\t2\t", 0), 0u);
  EXPECT_EQ(lines[4].rfind("EVAL\t3\t", 0), 0u);
  EXPECT_TRUE(fs::exists(ckpt()));
}

TEST_F(CliWorkflow, EvalReportsAgreeAndMatchTheLog) {
  const auto out = dir_ / "eval";
  ASSERT_EQ(run("eval --ckpt " + ckpt() + " --data " + data() + " --out " + out.string()), 0);
  auto j = nlohmann::json::parse(slurp(out / "eval.json"));
  MetricReport r = MetricReport::from_json(j);
  EXPECT_EQ(slurp(out / "eval.txt"), r.to_text());
  // The final EVAL line of training was computed on the same data.
  auto lines = lines_of(dir_ / "run" / "train.log");
  std::istringstream last(lines.back());
  std::string tag;
  unsigned long long step;
  double iou, f1;
  last >> tag >> step >> iou >> f1;
  EXPECT_NEAR(r.f1, f1, 1e-6);
  EXPECT_NEAR(r.iou, iou, 1e-6);
}

TEST_F(CliWorkflow, PerturbedEvalRecordsItsSettings) {
  const auto out = dir_ / "eval_noise";
  ASSERT_EQ(run("eval --ckpt " + ckpt() + " --data " + data() + " --out " + out.string() +
                " --noise 0.05 --brightness 0.2 --contrast 1.2"),
            0);
  auto j = nlohmann::json::parse(slurp(out / "eval.json"));
  EXPECT_EQ(j.at("perturbation").at("contrast").get<double>(), 1.2);
  EXPECT_EQ(run("eval --ckpt " + ckpt() + " --data " + data() + " --noise -1"), 2);
}

TEST_F(CliWorkflow, PredictWritesMaskAndOverlay) {
  const auto out = dir_ / "predict";
  const std::string pair = " --a " + data() + "/A/00000.png --b " + data() + "/B/00000.png";
  std::string log;
  EXPECT_EQ(run("predict --ckpt " + ckpt() + pair + " --out " + out.string(), &log), 2) << log;
  ASSERT_EQ(run("predict --ckpt " + ckpt() + pair + " --captions " + data() + "/captions.jsonl --label " + data() +
                    "/label/00000.png --out " + out.string(),
                &log),
            0)
      << log;
  const Raster mask = read_png((out / "mask.png").string(), 1);
  const Raster o = read_png((out / "overlay.png").string(), 3);
  const Raster gt = read_png(data() + "/label/00000.png", 1);
  std::vector<std::uint8_t> pred, truth;
  for (auto v : mask.pixels) pred.push_back(v > 127);
  for (auto v : gt.pixels) truth.push_back(v > 127);
  EXPECT_EQ(overlay_counts(o), confusion(pred, truth));
}

TEST_F(CliWorkflow, HeatmapIsWritten) {
  const auto out = dir_ / "heat.png";
  ASSERT_EQ(run("heatmap --ckpt " + ckpt() + " --a " + data() + "/A/00001.png --b " + data() +
                "/B/00001.png --caption-a 'one road' --caption-b 'two roads' --out " + out.string()),
            0);
  const Raster r = read_png(out.string(), 3);
  EXPECT_EQ(r.height, 32);
}

TEST_F(CliWorkflow, CorruptCheckpointIsARuntimeFailure) {
  const auto bad = dir_ / "bad.bin";
  std::ofstream(bad) << "garbage";
  EXPECT_EQ(run("eval --ckpt " + bad.string() + " --data " + data()), 1);
}

TEST(Cli, ResumeContinuesTheStepCounter) {
  const auto dir = testing::scratch_dir("cli_resume");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run("gen-data --count 4 --size 32 --seed 4 --out " + data), 0);
  const std::string common =
      "train --data " + data + " --seed 1 --set max_iteration=4 " + std::string(kTinyModel) + " --out ";
  ASSERT_EQ(run(common + (dir / "straight").string()), 0);
  ASSERT_EQ(run(common + (dir / "split").string() + " --stop-at 2"), 0);
  ASSERT_EQ(run(common + (dir / "split").string() + " --resume"), 0);
  EXPECT_EQ(lines_of(dir / "split" / "train.log"), lines_of(dir / "straight" / "train.log"));
  EXPECT_EQ(slurp(dir / "split" / "checkpoint.bin"), slurp(dir / "straight" / "checkpoint.bin"));
  std::string out;
  EXPECT_EQ(run(common + (dir / "split").string() + " --resume --no-tde", &out), 1) << out;
}

TEST(Cli, AblateWritesATable) {
  const auto dir = testing::scratch_dir("cli_ablate");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run("gen-data --count 2 --size 32 --seed 6 --out " + data), 0);
  std::string out;
  ASSERT_EQ(run("ablate --data " + data + " --out " + (dir / "abl").string() +
                    " --seeds 1 --variants full,image-only --set max_iteration=1 " + kTinyModel,
                &out),
            0)
      << out;
  auto lines = lines_of(dir / "abl" / "ablation.tsv");
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1].rfind("full\t1\t", 0), 0u);
  EXPECT_EQ(lines[2].rfind("image-only\t1\t", 0), 0u);
  EXPECT_EQ(run("ablate --data " + data + " --out " + (dir / "abl").string() + " --variants nothing"), 2);
}

}  // namespace
}  // namespace mmchange
