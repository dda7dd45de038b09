#include <gtest/gtest.h>

#include <json.hpp>

#include "sid/image_io.hpp"
#include "sid/process.hpp"
#include "support.hpp"

using namespace sid;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ProcessResult sid_cli(std::vector<std::string> args) {
  args.insert(args.begin(), SID_CLI_PATH);
  return run_process(args, {}, std::chrono::seconds{120});
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(sid_cli({}).exit_code, 1);
  EXPECT_EQ(sid_cli({"frobnicate"}).exit_code, 1);
  EXPECT_EQ(sid_cli({"describe", "--config", "/nonexistent/config.json"}).exit_code, 1);
  EXPECT_EQ(sid_cli({"evaluate", "--jobs", "0"}).exit_code, 1);
  EXPECT_EQ(sid_cli({"--help"}).exit_code, 0);
}

TEST(Cli, FullRunWithFlagOverrides) {
  testkit::TempDir dir;
  const std::string config = testkit::write_demo_project(dir.path()).string();
  const std::string out = (dir / "flagged").string();
  for (const char* cmd : {"describe", "segment", "tune", "sample", "evaluate", "attn", "report"}) {
    const auto r = sid_cli({cmd, "-c", config, "-o", out, "--jobs", "2", "--set", "sample.steps=4"});
    EXPECT_EQ(r.exit_code, 0) << cmd << ": " << r.err;
    EXPECT_NE(r.out.find(std::string(cmd) + ": "), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(fs::path(out) / "reports/aggregate.csv"));
  EXPECT_FALSE(fs::exists(dir / "out"));
  const json meta = json::parse(read_text_file(fs::path(out) / "generated/dreambooth-case3/perfume/p00/generated.json"));
  EXPECT_EQ(meta["generation_prompt"], "a [v] perfume on a beach");
}

TEST(Cli, PartialAndTotalFailure) {
  testkit::TempDir dir;
  const std::string config = testkit::write_demo_project(dir.path()).string();
  for (const char* cmd : {"describe", "segment", "tune", "sample"}) ASSERT_EQ(sid_cli({cmd, "-c", config}).exit_code, 0);
  fs::remove_all(dir / "out/generated/dreambooth-case3/perfume/p00");
  EXPECT_EQ(sid_cli({"evaluate", "-c", config}).exit_code, 2);
  fs::remove_all(dir / "out/masks");
  EXPECT_EQ(sid_cli({"evaluate", "-c", config}).exit_code, 3);
}

TEST(Cli, BadAttentionTokenIsUsageError) {
  testkit::TempDir dir;
  const std::string config = testkit::write_demo_project(dir.path()).string();
  const auto r = sid_cli({"attn", "-c", config, "--token", "volcano"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("volcano"), std::string::npos);
  EXPECT_EQ(sid_cli({"attn", "-c", config, "--handle", "x"}).exit_code, 1);
}

TEST(Cli, CaseAndMethodFlagsPickTheRunLabel) {
  testkit::TempDir dir;
  const std::string config = testkit::write_demo_project(dir.path()).string();
  ASSERT_EQ(sid_cli({"describe", "-c", config, "--case", "case1"}).exit_code, 0);
  ASSERT_EQ(sid_cli({"tune", "-c", config, "--case", "case1", "--method", "svdiff"}).exit_code, 0);
  EXPECT_TRUE(fs::exists(dir / "out/handles/svdiff-case1/perfume/metadata.json"));
  EXPECT_EQ(sid_cli({"describe", "-c", config, "--case", "case9"}).exit_code, 1);
}

TEST(Cli, ApiKeyInConfigIsRejected) {
  testkit::TempDir dir;
  const fs::path config = testkit::write_demo_project(dir.path());
  json doc = json::parse(read_text_file(config));
  doc["vlm"]["api_key"] = "sk-test";
  write_text_file(config, doc.dump());
  EXPECT_EQ(sid_cli({"describe", "-c", config.string()}).exit_code, 1);
}
