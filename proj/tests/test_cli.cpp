#include <gtest/gtest.h>

#include <cstdlib>
#include <map>

#include "test_support.hpp"

using namespace xbarsim;
namespace ts = testing_support;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(XBARSIM_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string common(const std::filesystem::path& out) {
  return "--model " + ts::toy_model_dir().string() + " --dataset " + ts::toy_dataset() + " --out " + out.string() +
         " --threads 2";
}

RunConfig toy_config(const std::filesystem::path& out) {
  RunConfig cfg;
  cfg.model = ts::toy_model_dir();
  cfg.dataset = ts::toy_dataset();
  cfg.out = out;
  cfg.calib_n = 16;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST(Stats, WritesTablesDeterministically) {
  const auto out = ts::temp_dir("cli-stats");
  ASSERT_EQ(cli("stats " + common(out) + " --calib-n 16 --seed 3"), 0);
  for (const char* f : {"probabilities.json", "lut_worst.json", "lut_stat.json"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  const auto first = ts::slurp(out / "lut_stat.json");
  const auto probs = ts::slurp(out / "probabilities.json");
  ASSERT_EQ(cli("stats " + common(out) + " --calib-n 16 --seed 3 --threads 1"), 0);
  EXPECT_EQ(ts::slurp(out / "lut_stat.json"), first);
  EXPECT_EQ(ts::slurp(out / "probabilities.json"), probs);
}

TEST(Stats, FourBitTablesHaveThreeEntries) {
  auto cfg = toy_config(ts::temp_dir("stats-4bit"));
  cfg.bits = 4;
  const auto out = cmd_stats(cfg);
  for (const auto* lut : {&out.worst, &out.statistical})
    for (const auto& l : lut->layers)
      for (const auto& ch : l.channels) EXPECT_EQ(ch.max.size(), 3u);
}

TEST(Stats, ZeroCalibrationImagesIsAnError) {
  const auto out = ts::temp_dir("cli-calib0");
  EXPECT_NE(cli("stats " + common(out) + " --calib-n 0"), 0);
  auto cfg = toy_config(out);
  cfg.calib_n = 0;
  EXPECT_THROW(cmd_stats(cfg), Error);
}

TEST(Run, ExactModeHasUnitRatios) {
  auto cfg = toy_config(ts::temp_dir("run-exact"));
  const auto doc = cmd_run(cfg);
  EXPECT_EQ(doc["reduction"]["reduction_overall"].get<double>(), 0.0);
  EXPECT_EQ(doc["hardware"]["ratios"]["energy_efficiency"].get<double>(), 1.0);
  EXPECT_EQ(doc["hardware"]["ratios"]["throughput"].get<double>(), 1.0);
  EXPECT_EQ(doc["accuracy"]["exact"], doc["accuracy"]["reduced"]);
  EXPECT_TRUE(std::filesystem::exists(cfg.out / "summary.csv"));
}

TEST(Run, MissingLutIsAnError) {
  const auto out = ts::temp_dir("cli-nolut");
  EXPECT_NE(cli("run " + common(out) + " --mode combined --bounds stat"), 0);
  auto cfg = toy_config(out);
  cfg.mode = "relu";
  EXPECT_THROW(cmd_run(cfg), Error);
  cfg.mode = "oracle";
  EXPECT_NO_THROW(cmd_run(cfg));
}

TEST(Run, CombinedAfterStats) {
  const auto out = ts::temp_dir("cli-run");
  ASSERT_EQ(cli("stats " + common(out) + " --calib-n 16"), 0);
  ASSERT_EQ(cli("run " + common(out) + " --mode combined --bounds stat --threshold 0.8"), 0);
  const auto doc = read_json_file(out / "results.json");
  EXPECT_GT(doc["reduction"]["reduction_overall"].get<double>(), 0.0);
  EXPECT_GT(doc["hardware"]["ratios"]["throughput"].get<double>(), 1.0);
  // paired baseline block lets the ratios be recomputed
  const double base = doc["hardware"]["baseline"]["energy_nj_per_frame"]["total"].get<double>();
  const double red = doc["hardware"]["reduced"]["energy_nj_per_frame"]["total"].get<double>();
  EXPECT_DOUBLE_EQ(doc["hardware"]["ratios"]["energy_efficiency"].get<double>(), base / red);
  const auto csv = ts::slurp(out / "summary.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Run, ConfigFileWithFlagOverride) {
  const auto out = ts::temp_dir("cli-config");
  std::ofstream(out / "run.toml") << "[run]\nmodel = \"" << ts::toy_model_dir().string() << "\"\n"
                                  << "dataset = \"" << ts::toy_dataset() << "\"\n"
                                  << "mode = \"relu\"\n";
  ASSERT_EQ(cli("run --config " + (out / "run.toml").string() + " --mode exact --out " + out.string()), 0);
  EXPECT_EQ(read_json_file(out / "results.json")["config"]["mode"], "exact");
}

TEST(Sweep, WorstCaseZeroThresholdMatchesExact) {
  const auto out = ts::temp_dir("cli-sweep");
  auto cfg = toy_config(out);
  cmd_stats(cfg);
  cfg.mode = "approx";
  const auto rows = cmd_sweep(cfg);
  ASSERT_EQ(rows.size(), 15u);
  std::map<BoundsMode, double> last;
  for (const auto& r : rows) {
    if (r.bounds == BoundsMode::WorstCase && r.threshold == 0.0) {
      EXPECT_EQ(r.reduction, 0.0);
      EXPECT_EQ(r.accuracy, r.accuracy_exact);
    }
    if (last.count(r.bounds)) {
      EXPECT_GE(r.reduction, last[r.bounds]);
    }
    last[r.bounds] = r.reduction;
    EXPECT_EQ(r.monotonicity_violations, 0u);
  }
  const auto csv = ts::slurp(out / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
}

TEST(Sweep, ThresholdListFromFlags) {
  const auto out = ts::temp_dir("cli-sweep-flags");
  ASSERT_EQ(cli("sweep " + common(out) + " --thresholds 0.5,0.1 --sweep-bounds oracle"), 0);
  const auto csv = ts::slurp(out / "sweep.csv");
  EXPECT_NE(csv.find("oracle,0.1,"), std::string::npos);
  EXPECT_LT(csv.find("oracle,0.1,"), csv.find("oracle,0.5,"));
}

TEST(Report, WritesAllReferencePoints) {
  const auto out = ts::temp_dir("cli-report");
  ASSERT_EQ(cli("report --out " + out.string()), 0);
  const auto doc = read_json_file(out / "report.json");
  EXPECT_EQ(doc.size(), 4u);
  ASSERT_EQ(cli("report --benchmark lenet5 --bits 8 --reduction 0.3 --out " + out.string()), 0);
  EXPECT_EQ(read_json_file(out / "report.json")[0]["reduction"].get<double>(), 0.3);
}

TEST(Cli, BadArgumentsFail) {
  EXPECT_NE(cli(""), 0);
  EXPECT_NE(cli("run --mode fast"), 0);
  EXPECT_NE(cli("run --bits 12"), 0);
  EXPECT_NE(cli("run --model /nonexistent --dataset mnist:a,b"), 0);
  EXPECT_NE(cli("report --reduction 1.5"), 0);
}
