#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ahl/cli.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using ahl::testing::TempDir;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

Outcome cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = ahl::run_cli(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::string f;
    std::istringstream ss(line);
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(fields);
  }
  return rows;
}

std::vector<std::string> tiny_train(const std::string& data, const std::string& out, const std::string& mode,
                                    const std::string& seed) {
  return {"train",   "--data",   data, "--out",        out, "--mode",  mode, "--samples", "2",
          "--epochs", "12",      "--warmup", "2", "--inner-epochs", "5", "--early-stop-window", "5",
          "--batch",  "4",       "--depth",  "2", "--widths", "2,4",  "--seed",  seed, "--quiet"};
}

/// Polylines of an SVG as lists of (x, y) points, keyed by
/// (data-run, data-landmark).
std::map<std::pair<int, int>, std::vector<std::pair<double, double>>> traces(const std::string& svg) {
  std::map<std::pair<int, int>, std::vector<std::pair<double, double>>> out;
  const std::regex group(R"re(<g class="trace" data-run="(\d+)" data-landmark="(\d+)">\s*<polyline[^>]*points="([^"]*)")re");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), group); it != std::sregex_iterator(); ++it) {
    const auto key = std::make_pair(std::stoi((*it)[1]), std::stoi((*it)[2]));
    EXPECT_EQ(out.count(key), 0u) << "duplicate trace";
    std::istringstream pts((*it)[3].str());
    std::string pt;
    auto& v = out[key];
    while (pts >> pt) {
      const auto c = pt.find(',');
      v.emplace_back(std::stod(pt.substr(0, c)), std::stod(pt.substr(c + 1)));
    }
  }
  return out;
}

std::size_t count_occurrences(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

/// Shared dataset and runs; training is the slow part, so it happens once.
class CliRuns : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir("cli-runs");
    data_ = (*root_ / "data").string();
    ASSERT_EQ(cli({"gen-data", "--n", "20", "--size", "16", "--landmarks", "2", "--seed", "42", "--out", data_}).code, 0);
    for (const auto& [name, mode, seed] : std::vector<std::tuple<std::string, std::string, std::string>>{
             {"laoml1", "laoml", "1"}, {"laoml2", "laoml", "2"}, {"fixed1", "fixed", "1"}}) {
      const auto o = cli(tiny_train(data_, run(name), mode, seed));
      ASSERT_EQ(o.code, 0) << o.err;
    }
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  static std::string run(const std::string& name) { return (*root_ / name).string(); }
  static std::string path(const std::string& name) { return (*root_ / name).string(); }

  static TempDir* root_;
  static std::string data_;
};

TempDir* CliRuns::root_ = nullptr;
std::string CliRuns::data_;

}  // namespace

// ---- gen-data ----------------------------------------------------------------------

TEST(CliGenData, DefaultSplitAndForceRegeneration) {
  TempDir dir("cli-gen");
  const auto out = (dir / "d").string();
  const auto first = cli({"gen-data", "--seed", "1", "--out", out});
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_NE(first.out.find("train=240 validation=80 test=80"), std::string::npos) << first.out;
  EXPECT_NE(first.out.find("size=64x64 landmarks=4"), std::string::npos) << first.out;
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(dir / "d/images")) images += e.path().extension() == ".pgm";
  EXPECT_EQ(images, 400u);

  const auto before = tree_contents(out);
  const auto refused = cli({"gen-data", "--seed", "1", "--out", out});
  EXPECT_EQ(refused.code, 1);
  EXPECT_NE(refused.err.find("--force"), std::string::npos);
  ASSERT_EQ(cli({"gen-data", "--seed", "1", "--out", out, "--force"}).code, 0);
  EXPECT_EQ(tree_contents(out), before);
}

TEST(CliGenData, RejectsInvalidArguments) {
  TempDir dir("cli-gen-bad");
  EXPECT_EQ(cli({"gen-data", "--n", "5", "--out", (dir / "a").string()}).code, 1);
  EXPECT_EQ(cli({"gen-data", "--landmarks", "9", "--out", (dir / "b").string()}).code, 1);
  EXPECT_EQ(cli({"gen-data", "--n", "ten", "--out", (dir / "c").string()}).code, 1);
  EXPECT_EQ(cli({"gen-data"}).code, 1);
  const auto o = cli({"frobnicate"});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("error: "), std::string::npos);
}

// ---- train -------------------------------------------------------------------------

TEST_F(CliRuns, TrainPrintsProgressAndTestSummary) {
  auto args = tiny_train(data_, path("progress"), "fixed", "3");
  args.pop_back();  // --quiet
  const auto o = cli(args);
  ASSERT_EQ(o.code, 0) << o.err;
  const std::regex epoch_line(R"(epoch=(\d+) mean_val_mre=[0-9.]+)");
  std::size_t lines = 0;
  for (auto it = std::sregex_iterator(o.out.begin(), o.out.end(), epoch_line); it != std::sregex_iterator(); ++it) {
    EXPECT_EQ(std::stoul((*it)[1]), ++lines);
  }
  EXPECT_EQ(lines, 12u);
  EXPECT_NE(o.out.find("test mre_mean="), std::string::npos);
}

TEST_F(CliRuns, TrainValidationErrorsExitOne) {
  auto too_long = tiny_train(data_, path("bad1"), "laoml", "1");
  too_long[std::find(too_long.begin(), too_long.end(), "--warmup") - too_long.begin() + 1] = "20";
  const auto o = cli(too_long);
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("error: "), std::string::npos);

  EXPECT_EQ(cli(tiny_train(data_, path("bad2"), "sideways", "1")).code, 1);
  EXPECT_EQ(cli(tiny_train(path("no-such-data"), path("bad3"), "fixed", "1")).code, 3);
  EXPECT_EQ(cli(tiny_train(data_, run("laoml1"), "fixed", "1")).code, 1);  // clobber without --force
}

TEST_F(CliRuns, SeedPrecedenceFlagEnvConfig) {
  const auto cfg = path("seed.json");
  std::ofstream(cfg) << R"({"seed": 7, "epochs": 2, "warmup": 0, "depth": 2, "widths": [2, 4], "batch": 4, "mode": "fixed"})";
  const auto seed_of = [](const std::string& dir) {
    return nlohmann::json::parse(slurp(fs::path(dir) / "config.echo.json"))["seed"].get<std::uint64_t>();
  };
  const std::vector<std::string> base{"train", "--config", cfg, "--data", data_, "--quiet"};
  const auto with = [&](std::vector<std::string> extra, const std::string& out) {
    auto args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    args.insert(args.end(), {"--out", out});
    return cli(args);
  };

  ::unsetenv("AHL_SEED");
  ASSERT_EQ(with({}, path("s_cfg")).code, 0);
  EXPECT_EQ(seed_of(path("s_cfg")), 7u);
  ::setenv("AHL_SEED", "8", 1);
  ASSERT_EQ(with({}, path("s_env")).code, 0);
  EXPECT_EQ(seed_of(path("s_env")), 8u);
  ASSERT_EQ(with({"--seed", "9"}, path("s_flag")).code, 0);
  EXPECT_EQ(seed_of(path("s_flag")), 9u);
  ::setenv("AHL_SEED", "eight", 1);
  EXPECT_EQ(with({}, path("s_bad")).code, 1);
  ::unsetenv("AHL_SEED");
}

TEST_F(CliRuns, EchoedConfigReproducesRun) {
  const auto o = cli({"train", "--config", run("laoml1") + "/config.echo.json", "--out", path("replay"), "--quiet"});
  ASSERT_EQ(o.code, 0) << o.err;
  for (const std::string f : {"sigma.csv", "reward.csv", "epochs.csv", "freeze.csv", "summary.json", "learner.ckpt",
                              "controllers.ckpt"}) {
    EXPECT_EQ(slurp(fs::path(path("replay")) / f), slurp(fs::path(run("laoml1")) / f)) << f;
  }
}

// ---- evaluate ----------------------------------------------------------------------

TEST_F(CliRuns, EvaluateMatchesTrainingSummary) {
  const auto o = cli({"evaluate", "--run", run("laoml1"), "--out", path("eval")});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(fs::path(path("eval")) / "evaluation.json")),
            nlohmann::json::parse(slurp(fs::path(run("laoml1")) / "summary.json")));
  EXPECT_NE(o.out.find("landmark 0 ("), std::string::npos);
  EXPECT_NE(o.out.find("landmark 1 ("), std::string::npos);
  EXPECT_NE(o.out.find("mean mre="), std::string::npos);
}

TEST_F(CliRuns, EvaluateCustomPck) {
  const auto o = cli({"evaluate", "--run", run("fixed1"), "--pck", "2,2.5,3,4"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(count_occurrences(o.out, "pck r="), 4u);
  EXPECT_NE(o.out.find("pck r=2.5 "), std::string::npos);
  EXPECT_EQ(cli({"evaluate", "--run", run("fixed1"), "--pck", "0"}).code, 1);
  EXPECT_EQ(cli({"evaluate", "--run", run("fixed1"), "--pck", "2,-1"}).code, 1);
  EXPECT_EQ(cli({"evaluate", "--run", path("missing-run")}).code, 3);
}

// ---- plot --------------------------------------------------------------------------

TEST_F(CliRuns, PlotFixedModeHasFlatSigma) {
  ASSERT_EQ(cli({"plot", "--run", run("fixed1"), "--out", path("plot_fixed")}).code, 0);
  const auto svg = slurp(fs::path(path("plot_fixed")) / "sigma_curves.svg");
  const auto t = traces(svg);
  ASSERT_EQ(t.size(), 2u);
  const auto sigma_rows = read_csv_rows(fs::path(run("fixed1")) / "sigma.csv");
  const std::size_t iterations = (sigma_rows.size() - 1) / 2;
  for (const auto& [key, pts] : t) {
    EXPECT_EQ(pts.size(), iterations);
    for (const auto& p : pts) EXPECT_EQ(p.second, pts.front().second);
  }
}

TEST_F(CliRuns, PlotPointsMatchIterations) {
  ASSERT_EQ(cli({"plot", "--run", run("laoml1"), "--out", path("plot_laoml")}).code, 0);
  const auto sigma_rows = read_csv_rows(fs::path(run("laoml1")) / "sigma.csv");
  std::size_t iterations = 0;
  for (std::size_t r = 1; r < sigma_rows.size(); ++r) iterations = std::max<std::size_t>(iterations, std::stoul(sigma_rows[r][0]) + 1);
  for (const auto& [key, pts] : traces(slurp(fs::path(path("plot_laoml")) / "sigma_curves.svg"))) {
    EXPECT_EQ(pts.size(), iterations);
  }
  const auto reward = traces(slurp(fs::path(path("plot_laoml")) / "reward_curves.svg"));
  ASSERT_EQ(reward.size(), 2u);
  for (const auto& [key, pts] : reward) EXPECT_EQ(pts.size(), iterations - 1);
}

TEST_F(CliRuns, PlotOverlayHasTwoTracesPerLandmark) {
  ASSERT_EQ(cli({"plot", "--run", run("laoml1"), "--run", run("fixed1"), "--label", "adaptive", "--label", "fixed",
                 "--out", path("plot_overlay")})
                .code,
            0);
  const auto svg = slurp(fs::path(path("plot_overlay")) / "sigma_curves.svg");
  EXPECT_EQ(count_occurrences(svg, "class=\"trace\""), 4u);
  const auto t = traces(svg);
  for (int lm = 0; lm < 2; ++lm) {
    EXPECT_EQ(t.count({0, lm}) + t.count({1, lm}), 2u);
  }
  EXPECT_NE(svg.find(">adaptive<"), std::string::npos);
  EXPECT_EQ(cli({"plot", "--run", run("fixed1"), "--out", path("plot_overlay")}).code, 1);
}

// ---- compare -----------------------------------------------------------------------

TEST_F(CliRuns, SelfCompareMarksBothRows) {
  const auto o = cli({"compare", "--run", run("laoml1"), "--run", run("laoml1"), "--out", path("cmp_self")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto rows = read_csv_rows(fs::path(path("cmp_self")) / "compare.csv");
  ASSERT_EQ(rows.size(), 4u);  // header, two runs, mean(laoml)
  EXPECT_EQ(rows[0].back(), "best");
  EXPECT_EQ(rows[1].back(), "mre_0;mre_1;mean;sd");
  EXPECT_EQ(rows[2].back(), "mre_0;mre_1;mean;sd");
  EXPECT_EQ(rows[3][0], "mean(laoml)");
  EXPECT_EQ(count_occurrences(o.out, "*"), 2u * 4u + 1u);  // marks plus the footnote
}

TEST_F(CliRuns, MeanRowRecomputedIndependently) {
  ASSERT_EQ(cli({"compare", "--run", run("laoml1"), "--run", run("laoml2"), "--run", run("fixed1"), "--out",
                 path("cmp_mean")})
                .code,
            0);
  const auto rows = read_csv_rows(fs::path(path("cmp_mean")) / "compare.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[4][0], "mean(laoml)");  // fixed has a single run, so no mean row

  const auto s1 = nlohmann::json::parse(slurp(fs::path(run("laoml1")) / "summary.json"));
  const auto s2 = nlohmann::json::parse(slurp(fs::path(run("laoml2")) / "summary.json"));
  for (int lm = 0; lm < 2; ++lm) {
    const double expected =
        0.5 * (s1["mre_per_landmark"][lm].get<double>() + s2["mre_per_landmark"][lm].get<double>());
    EXPECT_DOUBLE_EQ(std::stod(rows[4][2 + lm]), expected);
  }
  EXPECT_DOUBLE_EQ(std::stod(rows[4][4]), 0.5 * (s1["mre_mean"].get<double>() + s2["mre_mean"].get<double>()));
  EXPECT_DOUBLE_EQ(std::stod(rows[4][5]), 0.5 * (s1["mre_sd"].get<double>() + s2["mre_sd"].get<double>()));
  EXPECT_EQ(rows[4][6], "");

  // Every column's minimum among the three runs carries the mark.
  for (std::size_t c = 2; c <= 5; ++c) {
    double lo = std::stod(rows[1][c]);
    for (std::size_t r = 2; r <= 3; ++r) lo = std::min(lo, std::stod(rows[r][c]));
    const std::string col = c < 4 ? "mre_" + std::to_string(c - 2) : (c == 4 ? "mean" : "sd");
    for (std::size_t r = 1; r <= 3; ++r) {
      const bool marked = (";" + rows[r][6] + ";").find(";" + col + ";") != std::string::npos;
      EXPECT_EQ(marked, std::stod(rows[r][c]) == lo) << "row " << r << " column " << col;
    }
  }
}

TEST_F(CliRuns, CompareRejectsMismatchedLandmarks) {
  const auto data3 = path("data3");
  ASSERT_EQ(cli({"gen-data", "--n", "20", "--size", "16", "--landmarks", "3", "--seed", "5", "--out", data3}).code, 0);
  ASSERT_EQ(cli(tiny_train(data3, path("three"), "fixed", "1")).code, 0);
  const auto o = cli({"compare", "--run", run("fixed1"), "--run", path("three"), "--out", path("cmp_bad")});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("landmarks"), std::string::npos);
  EXPECT_EQ(cli({"compare", "--run", run("fixed1"), "--out", path("cmp_one")}).code, 1);
  EXPECT_EQ(cli({"compare", "--run", run("fixed1"), "--run", path("nope"), "--out", path("cmp_nope")}).code, 3);
}
