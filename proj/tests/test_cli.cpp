#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <json.hpp>

#include "concm/eval.hpp"
#include "concm/io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using concm::testing::scratch_dir;
using concm::testing::slurp;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(CONCM_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path config(const char* name) { return fs::path(CONCM_SOURCE_DIR) / "configs" / name; }

nlohmann::json error_of(const Outcome& o) {
  const auto j = nlohmann::json::parse(o.err);
  EXPECT_TRUE(j.contains("error")) << o.err;
  return j.at("error");
}

}  // namespace

TEST(CliGen, DefaultsWriteAManifest) {
  const auto dir = scratch_dir("gen");
  const auto o = cli("gen --out " + (dir / "bench").string(), dir);
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(dir / "bench" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "bench" / "truth.json"));
  EXPECT_NE(o.out.find("manifest.json"), std::string::npos);
}

TEST(CliGen, SameSeedSameBytes) {
  const auto dir = scratch_dir("gen_twice");
  const auto cfg = config("smoke_generator.json").string();
  ASSERT_EQ(cli("gen --config " + cfg + " --seed 7 --out " + (dir / "a").string(), dir).code, 0);
  ASSERT_EQ(cli("gen --config " + cfg + " --seed 7 --out " + (dir / "b").string(), dir).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path().filename();
  }
  EXPECT_GE(files, 6u);
}

TEST(CliGen, InfeasibleConfigWritesNothing) {
  const auto dir = scratch_dir("gen_bad");
  concm::io::write_file(dir / "g.json", R"({"pool_attributes": 5, "attributes_per_class": 4})");
  const auto o = cli("gen --config " + (dir / "g.json").string() + " --out " + (dir / "bench").string(), dir);
  EXPECT_EQ(o.code, 1);
  EXPECT_EQ(error_of(o).at("kind"), "InvalidConfig");
  EXPECT_EQ(error_of(o).at("command"), "gen");
  EXPECT_FALSE(fs::exists(dir / "bench"));
}

TEST(CliRun, SmokeRunIsByteDeterministic) {
  const auto dir = scratch_dir("run");
  ASSERT_EQ(cli("gen --config " + config("smoke_generator.json").string() + " --out " + (dir / "bench").string(), dir).code, 0);
  const std::string base = "run --manifest " + (dir / "bench" / "manifest.json").string() + " --config " +
                           config("smoke.json").string() + " --seed 3 --out ";
  const auto a = cli(base + (dir / "a").string(), dir);
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(cli(base + (dir / "b").string(), dir).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "report.json"), slurp(dir / "b" / "report.json"));
  EXPECT_EQ(slurp(dir / "a" / "session_2.json"), slurp(dir / "b" / "session_2.json"));
  const auto report = concm::load_report(dir / "a" / "report.json");
  EXPECT_EQ(report.sessions.size(), 3u);
  EXPECT_NE(a.out.find("AHM"), std::string::npos);

  const auto r = cli("report " + (dir / "a" / "report.json").string() + " --format csv", dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, slurp(dir / "a" / "report.csv"));
}

TEST(CliRun, BadInputsMapToExitCodes) {
  const auto dir = scratch_dir("run_bad");
  ASSERT_EQ(cli("gen --config " + config("smoke_generator.json").string() + " --out " + (dir / "bench").string(), dir).code, 0);
  const std::string manifest = (dir / "bench" / "manifest.json").string();

  concm::io::write_file(dir / "c.json", R"({"ways": 5, "bogus": 1})");
  auto o = cli("run --manifest " + manifest + " --config " + (dir / "c.json").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(o.code, 1);
  EXPECT_EQ(error_of(o).at("kind"), "SchemaError");

  o = cli("run --manifest " + manifest + " --strategy greedy --out " + (dir / "o").string(), dir);
  EXPECT_EQ(o.code, 1);

  fs::remove(dir / "bench" / "base.csv");
  o = cli("run --manifest " + manifest + " --config " + config("smoke.json").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(o.code, 3);
  EXPECT_EQ(error_of(o).at("kind"), "IoError");

  o = cli("frobnicate", dir);
  EXPECT_EQ(o.code, 1);
}

TEST(CliReport, SingleSessionFixture) {
  const auto dir = scratch_dir("report_one");
  concm::RunReport r;
  r.sessions.push_back({0, 90.0, 90.0, {}, {}, {}, {}, {}, {}});
  concm::finalize(r);
  concm::io::write_file(dir / "report.json", concm::format_report_json(r));
  const auto o = cli("report " + (dir / "report.json").string(), dir);
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("AHM -  FA 90.00  PD 0.00"), std::string::npos) << o.out;
}

TEST(CliReport, TableRowRendersHeadlineNumbers) {
  const auto dir = scratch_dir("report_table");
  const double hm[] = {70.34, 66.59, 63.38, 59.59, 57.05, 53.95, 53.49, 53.92};
  concm::RunReport r;
  r.sessions.push_back({0, 83.97, 83.97, {}, {}, {}, {}, {}, {}});
  for (int t = 1; t <= 8; ++t) {
    concm::SessionRecord s;
    s.t = t;
    s.top1 = t == 8 ? 59.92 : 70.0;
    s.hm = hm[t - 1];
    r.sessions.push_back(s);
  }
  concm::finalize(r);
  concm::io::write_file(dir / "report.json", concm::format_report_json(r));
  const auto o = cli("report " + (dir / "report.json").string(), dir);
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("AHM 59.79  FA 59.92  PD 24.05"), std::string::npos) << o.out;
}

TEST(CliReport, MissingFieldAndMissingFile) {
  const auto dir = scratch_dir("report_bad");
  concm::io::write_file(dir / "r.json", R"({"sessions": [], "fa": 1, "pd": 0, "base_acc": 1})");
  auto o = cli("report " + (dir / "r.json").string(), dir);
  EXPECT_EQ(o.code, 1);
  const auto e = error_of(o);
  EXPECT_EQ(e.at("command"), "report");
  EXPECT_EQ(e.at("exit_code"), 1);
  EXPECT_NE(e.at("message").get<std::string>().find("ahm"), std::string::npos) << o.err;

  o = cli("report " + (dir / "nope.json").string(), dir);
  EXPECT_EQ(o.code, 3);
  EXPECT_EQ(error_of(o).at("kind"), "IoError");
}
