// Copyright 2026 The vibre Authors.
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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("vibre_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Small corpus and model so every command finishes in seconds.
  std::string common(const fs::path& out) const {
    return " --out " + out.string() +
           " --set corpus.sizes.train=120 --set corpus.sizes.dev=40 --set corpus.sizes.test_id=40"
           " --set corpus.sizes.test_ood=40 --set train.epochs=1 --seed 1";
  }

  int run(const std::string& args) const {
    const std::string cmd = std::string(VIBRE_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const fs::path& p) const {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

TEST_F(CliTest, GenDataHashesAreStableAcrossRuns) {
  ASSERT_EQ(run("gen-data" + common(dir_ / "a")), 0) << read(dir_ / "stderr.txt");
  ASSERT_EQ(run("gen-data" + common(dir_ / "b")), 0) << read(dir_ / "stderr.txt");
  const auto a = nlohmann::json::parse(read(dir_ / "a" / "data" / "manifest.json"));
  const auto b = nlohmann::json::parse(read(dir_ / "b" / "data" / "manifest.json"));
  EXPECT_EQ(a.at("files"), b.at("files"));
  EXPECT_EQ(a.at("files").size(), 4u);
  EXPECT_EQ(read(dir_ / "a" / "data" / "train.jsonl"), read(dir_ / "b" / "data" / "train.jsonl"));
}

TEST_F(CliTest, UnknownConfigKeyFailsWithItsName) {
  std::ofstream(dir_ / "bad.json") << R"({"train": {"learning_rat": 0.1}})";
  EXPECT_NE(run("gen-data --config " + (dir_ / "bad.json").string() + common(dir_ / "x")), 0);
  EXPECT_NE(read(dir_ / "stderr.txt").find("train.learning_rat"), std::string::npos) << read(dir_ / "stderr.txt");
}

TEST_F(CliTest, TrainingDetectsTamperedData) {
  const fs::path out = dir_ / "t";
  ASSERT_EQ(run("gen-data" + common(out)), 0) << read(dir_ / "stderr.txt");
  std::ofstream(out / "data" / "dev.jsonl", std::ios::app) << "\n";
  EXPECT_NE(run("train --method vanilla" + common(out)), 0);
  EXPECT_NE(read(dir_ / "stderr.txt").find("manifest"), std::string::npos) << read(dir_ / "stderr.txt");
}

TEST_F(CliTest, PipelineRunsAndAnalyzeRejectsNonVibCheckpoints) {
  const fs::path out = dir_ / "p";
  const std::string args = common(out) + " --method vanilla --method vib";
  ASSERT_EQ(run("gen-data" + args), 0) << read(dir_ / "stderr.txt");
  ASSERT_EQ(run("train" + args), 0) << read(dir_ / "stderr.txt");
  ASSERT_EQ(run("eval" + args), 0) << read(dir_ / "stderr.txt");
  const std::string table = read(dir_ / "stdout.txt");
  EXPECT_NE(table.find("vanilla"), std::string::npos) << table;
  EXPECT_NE(table.find("vib"), std::string::npos) << table;
  ASSERT_EQ(run("analyze" + args), 0) << read(dir_ / "stderr.txt");

  const fs::path vanilla_ck = out / "runs" / "vanilla" / "seed1" / "model.json";
  ASSERT_TRUE(fs::exists(vanilla_ck));
  EXPECT_NE(run("analyze --checkpoint " + vanilla_ck.string() + args), 0);
  EXPECT_NE(read(dir_ / "stderr.txt").find("vib checkpoint"), std::string::npos) << read(dir_ / "stderr.txt");
}

}  // namespace
