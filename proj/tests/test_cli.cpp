#include <gtest/gtest.h>

#include <cstdlib>
#include <unistd.h>

#include "streameval/streameval.hpp"

namespace se = streameval;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("streameval_cli_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  int fixtures(const std::string& kind, const fs::path& out, bool force = false) {
    return se::cmd_fixtures(kind, out, force, out_, err_);
  }
  int run(const fs::path& manifest, const se::RunOverrides& o = {}) {
    return se::cmd_run(manifest, o, out_, err_);
  }
  int score(const fs::path& logs, const fs::path& annotations, const std::string& weighting = "uniform",
            std::optional<fs::path> out = std::nullopt) {
    se::ScoreArgs a;
    a.logs_dir = logs;
    a.annotations = {annotations};
    a.weighting = weighting;
    a.out_dir = out;
    return se::cmd_score(a, out_, err_);
  }

  fs::path dir;
  std::ostringstream out_, err_;
};

std::string slurp(const fs::path& p) { return se::read_file(p); }

}  // namespace

TEST_F(Cli, SmokeFixtureHasOneTrackPerType) {
  ASSERT_EQ(fixtures("smoke", dir), 0) << err_.str();
  const auto tracks = se::load_annotations({dir / "annotations.json"});
  ASSERT_EQ(tracks.size(), 3u);
  std::set<se::TaskType> types;
  for (const auto& t : tracks) types.insert(t.task_type);
  EXPECT_EQ(types.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST_F(Cli, TradeoffCaptionsChangeEveryFiveSeconds) {
  ASSERT_EQ(fixtures("tradeoff", dir), 0);
  const auto t = se::load_annotations({dir / "annotations.json"}).at(0);
  ASSERT_EQ(t.length(), 60u);
  for (std::size_t i = 1; i < 60; ++i)
    EXPECT_EQ(t.caption_at(i) != t.caption_at(i - 1), i % 5 == 0) << "t=" << i;
}

TEST_F(Cli, FixturesRefuseNonEmptyDirectory) {
  ASSERT_EQ(fixtures("buffer-drop", dir), 0);
  EXPECT_EQ(fixtures("buffer-drop", dir), 1);
  EXPECT_NE(err_.str().find("--force"), std::string::npos);
  EXPECT_EQ(fixtures("buffer-drop", dir, true), 0);
  EXPECT_EQ(fixtures("nonsense", dir / "x"), 1);
}

TEST_F(Cli, Validate) {
  ASSERT_EQ(fixtures("smoke", dir), 0);
  EXPECT_EQ(se::cmd_validate({dir / "annotations.json"}, out_, err_), 0);
  se::write_file(dir / "gap.json",
                 R"({"tracks":[{"task_id":"g","video_id":"v","task_type":"Present","category":"c","prompt":"q",)"
                 R"("entries":[{"t":0,"caption":"a"},{"t":2,"caption":"b"}]}]})");
  EXPECT_EQ(se::cmd_validate({dir / "gap.json"}, out_, err_), 1);
  EXPECT_NE(err_.str().find("gap at timestep 1"), std::string::npos);
  err_.str("");
  EXPECT_EQ(se::cmd_validate({dir / "missing.json"}, out_, err_), 1);
  EXPECT_NE(err_.str().find("cannot read"), std::string::npos);
}

TEST_F(Cli, SyncRunOfEchoScoresPerfectly) {
  ASSERT_EQ(fixtures("smoke", dir), 0);
  se::RunOverrides o;
  o.protocol = "sync";
  ASSERT_EQ(run(dir / "manifest.json", o), 0) << err_.str();
  ASSERT_EQ(score(dir / "runs", dir / "annotations.json"), 0) << err_.str();
  const auto report = nlohmann::json::parse(slurp(dir / "runs" / "report.json"));
  for (const auto& t : report["tasks"]) EXPECT_EQ(t["accuracy"], 1.0);
  const auto log = se::load_response_log(slurp(dir / "runs" / "smoke-present.responses.json"));
  EXPECT_EQ(log.protocol, se::Protocol::Sync);
  EXPECT_EQ(log.run_metadata["config_echo"]["overrides"]["protocol"], "sync");
}

TEST_F(Cli, CliOverridesWinAndLogsAreReproducible) {
  ASSERT_EQ(fixtures("smoke", dir), 0);
  se::RunOverrides o;
  o.policy = "sw+u";
  o.context_size = 4;
  o.out = (dir / "a").string();
  ASSERT_EQ(run(dir / "manifest.json", o), 0);
  o.out = (dir / "b").string();
  ASSERT_EQ(run(dir / "manifest.json", o), 0);
  const auto a = slurp(dir / "a" / "smoke-future.responses.json");
  EXPECT_EQ(a, slurp(dir / "b" / "smoke-future.responses.json"));
  const auto meta = se::load_response_log(a).run_metadata;
  EXPECT_EQ(meta["policy"], "sw+u");
  EXPECT_EQ(meta["context_size"], 4);
}

TEST_F(Cli, VirtualRemoteIsConfigError) {
  ASSERT_EQ(fixtures("smoke", dir), 0);
  se::write_file(dir / "remote.json", R"({"base_url":"http://127.0.0.1:1/v1","model":"m"})");
  se::RunOverrides o;
  o.backend = "remote:" + (dir / "remote.json").string();
  EXPECT_EQ(run(dir / "manifest.json", o), 1);
  EXPECT_NE(err_.str().find("virtual"), std::string::npos);
}

TEST_F(Cli, PartialFailureExitsTwo) {
  ASSERT_EQ(fixtures("buffer-drop", dir), 0);
  auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  m["run"]["backend_timeout"] = 1.0;
  se::write_file(dir / "manifest.json", m.dump(2));
  EXPECT_EQ(run(dir / "manifest.json"), 2);
  const auto summary = nlohmann::json::parse(slurp(dir / "runs" / "run_summary.json"));
  EXPECT_EQ(summary["tasks"][0]["status"], "incomplete");
}

TEST_F(Cli, ScoreReportsMissingLogs) {
  ASSERT_EQ(fixtures("smoke", dir), 0);
  ASSERT_EQ(run(dir / "manifest.json"), 0);
  fs::remove(dir / "runs" / "smoke-future.responses.json");
  EXPECT_EQ(score(dir / "runs", dir / "annotations.json"), 1);
  EXPECT_NE(err_.str().find("smoke-future"), std::string::npos);
}

TEST_F(Cli, ScoreWarnsOnOrphans) {
  ASSERT_EQ(fixtures("smoke", dir), 0);
  ASSERT_EQ(run(dir / "manifest.json"), 0);
  fs::copy_file(dir / "runs" / "smoke-future.responses.json", dir / "runs" / "extra.responses.json");
  auto log = se::load_response_log(slurp(dir / "runs" / "extra.responses.json"));
  log.task_id = "extra";
  se::write_file(dir / "runs" / "extra.responses.json", se::serialize_response_log(log));
  EXPECT_EQ(score(dir / "runs", dir / "annotations.json"), 0);
  EXPECT_NE(err_.str().find("orphan"), std::string::npos);
}

TEST_F(Cli, ReweightedRowAppears) {
  ASSERT_EQ(fixtures("smoke", dir), 0);
  ASSERT_EQ(run(dir / "manifest.json"), 0);
  ASSERT_EQ(score(dir / "runs", dir / "annotations.json", "inverse_category"), 0);
  const auto md = slurp(dir / "runs" / "report.md");
  EXPECT_NE(md.find("| uniform |"), std::string::npos);
  EXPECT_NE(md.find("| inverse_category |"), std::string::npos);
  EXPECT_EQ(score(dir / "runs", dir / "annotations.json", "bogus"), 1);
}

TEST_F(Cli, BinaryReproducesGoldenReport) {
  const std::string cli = STREAMEVAL_CLI;
  const std::string d = dir.string();
  ASSERT_EQ(std::system((cli + " fixtures smoke --out " + d + " > /dev/null").c_str()), 0);
  ASSERT_EQ(std::system((cli + " run --manifest " + d + "/manifest.json > /dev/null").c_str()), 0);
  ASSERT_EQ(std::system((cli + " score --logs " + d + "/runs --annotations " + d +
                         "/annotations.json --out " + d + "/report > /dev/null")
                            .c_str()),
            0);
  const fs::path golden = STREAMEVAL_GOLDEN_DIR;
  EXPECT_EQ(slurp(dir / "report" / "report.json"), slurp(golden / "smoke_report.json"));
  EXPECT_EQ(slurp(dir / "report" / "report.md"), slurp(golden / "smoke_report.md"));
  EXPECT_NE(std::system((cli + " validate " + d + "/nope.json 2> /dev/null").c_str()), 0);
}
