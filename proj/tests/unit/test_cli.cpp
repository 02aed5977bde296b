// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "kvfuse/kvff.hpp"
#include "kvfuse/workload.hpp"

namespace kvfuse::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Invocation {
  int code;
  std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "kvfuse_cli_test";
    fs::create_directories(dir_);
    const Invocation r = invoke({"fixtures", "--dir", dir_.string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  static std::string fixture(const std::string& name) { return (dir_ / (name + ".kvff")).string(); }
  static inline fs::path dir_;
};

TEST_F(CliTest, FixturesAreWritten) {
  for (const auto& name : fixture_names()) {
    EXPECT_TRUE(fs::exists(fixture(name)));
    std::ifstream spec(dir_ / (name + ".json"));
    EXPECT_EQ(spec_from_json(json::parse(spec)), named_fixture(name));
  }
}

TEST_F(CliTest, FuseRedundantCollapses) {
  const Invocation r = invoke({"fuse", "--in", fixture("redundant"), "--variant", "bff", "--threshold", "0.9"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  for (const auto& layer : j["layers"]) EXPECT_EQ(layer["blocks_after"], 1);
  ASSERT_EQ(j["tables"].size(), 2u);
  EXPECT_EQ(j["tables"][0]["physical_blocks"], 1);
}

TEST_F(CliTest, ThresholdOutOfDomainIsUsageError) {
  const Invocation r = invoke({"fuse", "--in", fixture("redundant"), "--threshold", "1.5"});
  EXPECT_EQ(r.code, kExitUsage);
  const json e = json::parse(r.err);
  EXPECT_EQ(e["error"], "usage_error");
}

TEST_F(CliTest, ChunkRowsFollowFloorFormula) {
  const Invocation r = invoke({"fuse", "--in", fixture("cff"), "--variant", "cff", "--chunk-tokens", "32"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const auto& layer : json::parse(r.out)["layers"]) {
    EXPECT_EQ(layer["rows"], 4);
    EXPECT_EQ(layer["chunks_per_request"], 4);
  }
}

TEST_F(CliTest, LibraryErrorsAreStructured) {
  Invocation r = invoke({"fuse", "--in", fixture("cff"), "--variant", "cff", "--chunk-tokens", "24"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_EQ(json::parse(r.err)["error"], "alignment_error");
  r = invoke({"fuse", "--in", fixture("cff"), "--variant", "cff"});
  EXPECT_EQ(json::parse(r.err)["error"], "config_error");
  const fs::path bad = dir_ / "bad.kvff";
  std::ofstream(bad) << "KVFFjunk";
  r = invoke({"fuse", "--in", bad.string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_EQ(json::parse(r.err)["error"], "format_error");
}

TEST_F(CliTest, FuseCsv) {
  const fs::path out = dir_ / "fuse.csv";
  const Invocation r = invoke({"fuse", "--in", fixture("tight4"), "--format", "csv", "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  const auto rows = csv_rows(ss.str());
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0][0], "layer");
  EXPECT_EQ(rows[1][1], "bff");
}

TEST_F(CliTest, SweepOrthogonalStaysUncompressed) {
  const Invocation r = invoke({"sweep", "--in", fixture("orthogonal"), "--grid", "0.99"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0][1], "cr_empirical");
  EXPECT_EQ(std::stod(rows[1][1]), 1.0);
}

TEST_F(CliTest, SweepCompressionNonincreasingInThreshold) {
  const Invocation r = invoke({"sweep", "--in", fixture("clusters4"), "--grid", "0.5:0.95:0.05", "--group-size", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 11u);
  for (std::size_t i = 2; i < rows.size(); ++i) {
    EXPECT_LT(std::stod(rows[i - 1][0]), std::stod(rows[i][0]));
    EXPECT_GE(std::stod(rows[i - 1][1]), std::stod(rows[i][1]));
  }
}

TEST_F(CliTest, AnalyzeCsv) {
  const Invocation r = invoke({"analyze", "--in", fixture("clusters4"), "--pair", "0", "1", "--u-grid", "0.9,0.95"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = csv_rows(r.out);
  ASSERT_EQ(rows.size(), 1u + 2u * 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"layer", "u", "lambda_evt", "lambda_gauss", "cr_predicted", "p_no_fusion"}));
}

TEST_F(CliTest, VerifyBound) {
  const Invocation r = invoke({"verify-bound", "--trials", "200", "--d", "8", "--u", "0.9", "--seed", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["trials"], 200);
  EXPECT_EQ(j["violations"], 0);
  EXPECT_EQ(j["d"], 8);
  EXPECT_LE(j["max_ratio"].get<double>(), 1.0);
}

TEST_F(CliTest, GenerateFromFlagsAndSpec) {
  const fs::path out = dir_ / "gen.kvff";
  Invocation r = invoke({"generate", "--out", out.string(), "--layers", "1", "--requests", "2", "--blocks", "3",
                  "--tokens", "2", "--heads", "1", "--head-dim", "4", "--clusters", "2", "--seed", "7"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(load_cache(out).dims(), (CacheDims{1, 2, 3, 2, 1, 4}));
  r = invoke({"generate", "--spec", (dir_ / "tight4.json").string(), "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(load_cache(out), load_cache(fixture("tight4")));
}

TEST_F(CliTest, BenchReportsTimings) {
  const Invocation r = invoke({"bench", "--fixture", "tight4", "--repeats", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["repeats"], 2);
  EXPECT_GE(j["mean_ms"].get<double>(), 0.0);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, kExitUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(invoke({"fuse"}).code, kExitUsage);
  EXPECT_EQ(invoke({"fuse", "--in", "/nonexistent.kvff"}).code, kExitUsage);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
}

TEST(Cli, ParseGrid) {
  EXPECT_EQ(parse_grid("0.1,0.5,0.9"), (std::vector<double>{0.1, 0.5, 0.9}));
  const auto g = parse_grid("0.7:0.95:0.05");
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g[2], 0.8);
  EXPECT_EQ(g.back(), 0.95);
  EXPECT_THROW(parse_grid(""), std::exception);
  EXPECT_THROW(parse_grid("a,b"), std::exception);
  EXPECT_THROW(parse_grid("0.9:0.1:0.1"), std::exception);
}

}  // namespace
}  // namespace kvfuse::cli
