#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "purc/detail/csv.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::string kData = PURC_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("purc_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  return dir;
}

int purc(const std::string& args) {
  const std::string cmd = std::string(PURC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<double> column(const fs::path& p, std::size_t col) {
  const auto t = purc::detail::read_csv_file(p.string());
  std::vector<double> out;
  for (const auto& r : t.rows) out.push_back(std::stod(r.at(col)));
  return out;
}

std::string toy() { return "--model " + kData + "/toy/model.toml"; }
std::string grid(char model) { return "--model " + kData + "/grid/model_" + model + ".toml"; }

TEST(Cli, SolveOnToyNetworkMatchesBaseRow) {
  const auto out = scratch("solve");
  ASSERT_EQ(purc("solve " + toy() + " --od O,D --out " + out.string()), 0);
  const auto x = column(out / "flows.csv", 1);
  const std::vector<double> expect = {0.424, 0.576, 0.288, 0.288, 0.0, 0.0};
  ASSERT_EQ(x.size(), expect.size());
  for (std::size_t e = 0; e < 4; ++e) EXPECT_NEAR(x[e], expect[e], 1e-3) << "link " << e + 1;
  EXPECT_EQ(x[4], 0.0);
  EXPECT_EQ(x[5], 0.0);
  EXPECT_TRUE(fs::exists(out / "config.toml"));
  const auto m = load_json(out / "manifest.json");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["version"], PURC_VERSION);
  EXPECT_TRUE(m["config_hash"].get<std::string>().starts_with("fnv1a64:"));
}

TEST(Cli, SubstitutionRatios) {
  const auto out = scratch("substitution");
  ASSERT_EQ(purc("solve " + toy() + " --od O,D --delta 4:-0.1 --out " + out.string()), 0);
  const auto t = purc::detail::read_csv_file((out / "substitution.csv").string());
  const std::vector<double> ratio = {1.047, 0.965, 1.187, 0.743};
  for (std::size_t e = 0; e < 4; ++e) EXPECT_NEAR(std::stod(t.rows[e][3]), ratio[e], 1e-2);
  EXPECT_EQ(t.rows[4][3], "");
}

TEST(Cli, MissingNetworkIsDataError) {
  const auto out = scratch("missing");
  EXPECT_EQ(purc("solve --network " + (out / "nope.csv").string() + " --beta=-1 --od O,D --out " +
                 out.string()),
            3);
  const auto err = load_json(out / "error.json");
  EXPECT_EQ(err["error"]["kind"], "data");
  EXPECT_EQ(err["error"]["exit_code"], 3);
  EXPECT_EQ(load_json(out / "manifest.json")["status"], "error");
}

TEST(Cli, UsageAndNumericalExitCodes) {
  const auto out = scratch("codes");
  EXPECT_EQ(purc("solve --od O,D --no-such-flag"), 2);
  EXPECT_EQ(purc("frobnicate"), 2);
  // beta of the wrong length
  EXPECT_EQ(purc("solve " + toy() + " --beta=-1,2 --od O,D --out " + out.string()), 2);
  // D has no outgoing links
  EXPECT_EQ(purc("solve " + toy() + " --od D,O --out " + out.string()), 4);
  EXPECT_EQ(load_json(out / "error.json")["error"]["kind"], "numerical");
}

TEST(Cli, BaselinePslOnToyNetwork) {
  const auto out = scratch("baseline");
  ASSERT_EQ(purc("baseline --config " + kData + "/toy/model.toml --model psl --od O,D --out " +
                 out.string()),
            0);
  const auto x = column(out / "baseline_flows.csv", 1);
  EXPECT_NEAR(x[0], 0.404, 2e-3);
  EXPECT_NEAR(x[1], 0.589, 2e-3);
  EXPECT_NEAR(x[5], 0.007, 2e-3);
  EXPECT_EQ(load_json(out / "baseline.json")["routes"].size(), 4u);
}

TEST(Cli, SweepSingleValueEqualsSolve) {
  const auto a = scratch("sweep1"), b = scratch("solve1");
  ASSERT_EQ(purc("sweep " + toy() + " --od O,D --grid=-1 --out " + a.string()), 0);
  ASSERT_EQ(purc("solve " + toy() + " --od O,D --out " + b.string()), 0);
  EXPECT_EQ(column(a / "sweep.csv", 2), column(b / "flows.csv", 1));
}

TEST(Cli, SweepActiveSetShrinksWithScale) {
  const auto out = scratch("sweep6");
  ASSERT_EQ(purc("sweep " + grid('a') + " --od n7_0,n10_11 --grid=-0.5,-1,-1.5,-2,-2.5,-3 --out " +
                 out.string()),
            0);
  const auto active = column(out / "sweep_stats.csv", 1);
  ASSERT_EQ(active.size(), 6u);
  for (std::size_t k = 1; k < active.size(); ++k) EXPECT_LE(active[k], active[k - 1]);
}

TEST(Cli, SimulateEstimateValidatePipeline) {
  const auto root = scratch("pipeline");
  const std::string plan = " --plan " + kData + "/grid/plan.toml";
  ASSERT_EQ(purc("simulate " + grid('b') + plan + " --jobs 1 --out " + (root / "sim1").string()), 0);
  ASSERT_EQ(purc("simulate " + grid('b') + plan + " --jobs 4 --out " + (root / "sim4").string()), 0);
  EXPECT_EQ(slurp(root / "sim1/trips.jsonl"), slurp(root / "sim4/trips.jsonl"));
  EXPECT_EQ(slurp(root / "sim1/solution_stats.csv"), slurp(root / "sim4/solution_stats.csv"));
  EXPECT_EQ(slurp(root / "sim1/config.toml"), slurp(root / "sim4/config.toml"));

  const std::string trips = " --trips " + (root / "sim1/trips.jsonl").string();
  ASSERT_EQ(purc("estimate " + grid('b') + trips + " --jobs 1 --out " + (root / "est1").string()), 0);
  ASSERT_EQ(purc("estimate " + grid('b') + trips + " --jobs 4 --out " + (root / "est4").string()), 0);
  EXPECT_EQ(slurp(root / "est1/fit.json"), slurp(root / "est4/fit.json"));
  const auto fit = load_json(root / "est1/fit.json");
  EXPECT_NEAR(fit["beta"]["pace"].get<double>(), -1.5, 0.15);
  EXPECT_NEAR(fit["beta"]["outlinks"].get<double>(), -0.4, 0.04);
  EXPECT_EQ(fit["n_ods_used"], 20);

  ASSERT_EQ(purc("validate " + grid('b') + trips + " --fit " + (root / "est1/fit.json").string() +
                 " --out " + (root / "val").string()),
            0);
  const auto rep = load_json(root / "val/report.json");
  for (const char* key : {"adj_r2", "adj_r2_alternative", "fully_covered_share", "unused_links"})
    EXPECT_TRUE(rep.contains(key)) << key;
  EXPECT_GT(rep["adj_r2"].get<double>(), 0.9);
  EXPECT_EQ(rep["num_trips"], 5000);
  EXPECT_EQ(column(root / "val/flows_scatter.csv", 1).size(), 528u);
  const auto cdf = column(root / "val/outside_cdf.csv", 1);
  ASSERT_FALSE(cdf.empty());
  EXPECT_EQ(cdf.back(), 1.0);
}

TEST(Cli, TrimAndFilterPartitionTheirInput) {
  const auto root = scratch("prep");
  ASSERT_EQ(purc("simulate " + grid('a') + " --set 'simulate.demand=\"" + kData +
                 "/grid/demand.csv\"' --seed 3 --out " + (root / "sim").string()),
            0);
  const std::string trips = " --trips " + (root / "sim/trips.jsonl").string();
  ASSERT_EQ(purc("trim " + grid('a') + trips + " --n-origins 3 --n-destinations 3 --out " +
                 (root / "trim").string()),
            0);
  auto s = load_json(root / "trim/summary.json");
  EXPECT_EQ(s["input"], 200);
  EXPECT_EQ(s["kept"].get<int>() + s["discarded"].get<int>(), 200);
  EXPECT_EQ(s["origins"]["nodes"].size(), 3u);

  ASSERT_EQ(purc("filter " + grid('a') + trips + " --screen-beta=-0.3 --threshold 0.95 --out " +
                 (root / "filter").string()),
            0);
  s = load_json(root / "filter/summary.json");
  EXPECT_EQ(s["kept"].get<int>() + s["discarded"].get<int>(), 200);
  EXPECT_EQ(purc("filter " + grid('a') + trips + " --screen-beta=-0.3 --threshold 1.5 --out " +
                 (root / "bad").string()),
            2);
}

}  // namespace
