// Drives the bapla executable end to end; BAPLA_CLI_PATH is set by CMake.

#include "bapla/fit.hpp"
#include "bapla/io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace bapla;
using testkit::scratch_dir;
using testkit::slurp;

namespace {

struct CliResult {
    int code = -1;
    std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = std::string("'") + BAPLA_CLI_PATH + "' " + args + " 2> '" + err.string() + "' > /dev/null";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    if (from.empty()) return text;
    for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) text.replace(pos, from.size(), to);
    return text;
}

// Files written from inputs in b's sibling directories may echo those paths; map them back before comparing.
void expect_same_tree(const fs::path& a, const fs::path& b, const std::string& from = "", const std::string& to = "") {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
    ASSERT_FALSE(names.empty());
    for (const auto& n : names) {
        ASSERT_TRUE(fs::exists(b / n)) << n;
        EXPECT_EQ(slurp(a / n), replace_all(slurp(b / n), from, to)) << n;
    }
    EXPECT_EQ(std::distance(fs::directory_iterator(b), fs::directory_iterator{}), static_cast<long>(names.size()));
}

std::vector<std::string> csv_row(const fs::path& p, int index) {
    std::ifstream in(p);
    std::string line;
    for (int k = 0; k <= index; ++k) std::getline(in, line);
    return detail::split_csv(line);
}

void copy_truth_as_estimate(const fs::path& root) {
    const fs::path est = root / "est_is_truth";
    fs::create_directories(est);
    const auto opt = fs::copy_options::overwrite_existing;
    fs::copy_file(root / "sim" / "truth_gamma.csv", est / "gamma.csv", opt);
    fs::copy_file(root / "sim" / "truth_beta.csv", est / "beta.csv", opt);
    fs::copy_file(root / "sim" / "truth_f.csv", est / "fhat.csv", opt);
}

const char* kSimConfig = R"({
  "seed": 1,
  "network": { "d": 10, "kind": "chain" },
  "simulation": { "beta": 0.1, "n": 1000 },
  "basis": { "m": 6 },
  "fit": { "lambda_grid_size": 12 }
})";

} // namespace

class CliPipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = scratch_dir("cli_pipeline");
        write_text(root_ / "sim.json", kSimConfig);
        ASSERT_EQ(run_cli("simulate --config " + q(root_ / "sim.json") + " --out " + q(root_ / "sim"), root_).code, 0);
    }
    static fs::path root_;
};
fs::path CliPipeline::root_;

TEST_F(CliPipeline, SimulateIsByteIdenticalOnRerun) {
    ASSERT_EQ(run_cli("simulate --config " + q(root_ / "sim.json") + " --out " + q(root_ / "sim2"), root_).code, 0);
    expect_same_tree(root_ / "sim", root_ / "sim2");
    for (const char* f : {"panel.csv", "panel.json", "truth_gamma.csv", "truth_beta.csv", "truth_f.csv", "simulation_meta.json",
                          "resolved_config.json"})
        EXPECT_TRUE(fs::exists(root_ / "sim" / f)) << f;
}

TEST_F(CliPipeline, FitAndInferIndependentOfThreads) {
    const std::string panel = q(root_ / "sim" / "panel.csv");
    for (int threads : {1, 8}) {
        const std::string tag = std::to_string(threads);
        ASSERT_EQ(run_cli("fit --config " + q(root_ / "sim.json") + " --panel " + panel + " --threads " + tag + " --out " +
                              q(root_ / ("fit" + tag)),
                          root_)
                      .code,
                  0);
        ASSERT_EQ(run_cli("infer --panel " + panel + " --fit-dir " + q(root_ / ("fit" + tag)) + " --threads " + tag + " --out " +
                              q(root_ / ("inf" + tag)),
                          root_)
                      .code,
                  0);
    }
    expect_same_tree(root_ / "fit1", root_ / "fit8");
    expect_same_tree(root_ / "inf1", root_ / "inf8", "/fit8", "/fit1");
    const auto meta = read_json((root_ / "fit1" / "fit_meta.json").string());
    EXPECT_EQ(meta["lambda_source"], "bic");
    EXPECT_EQ(meta["neurons"].size(), 10u);
}

TEST_F(CliPipeline, TrendFreeFitSkipsSplines) {
    const CliResult r = run_cli("fit --trend-basis 0 --lambda 5 --panel " + q(root_ / "sim" / "panel.csv") + " --out " + q(root_ / "fit_m0"),
                          root_);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto coefs = read_matrix_csv((root_ / "fit_m0" / "spline_coefs.csv").string());
    EXPECT_EQ(coefs.values.cols(), 0);
    const auto fhat = read_matrix_csv((root_ / "fit_m0" / "fhat.csv").string());
    EXPECT_EQ(fhat.values.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(read_json((root_ / "fit_m0" / "fit_meta.json").string())["basis"]["m"], 0);
    EXPECT_NE(run_cli("fit --m 0 --trend-basis 0 --panel " + q(root_ / "sim" / "panel.csv") + " --out " + q(root_ / "x"), root_).code,
              0);
}

TEST_F(CliPipeline, PenaltyAtLambdaMaxGivesEmptyNetwork) {
    const auto panel = read_panel_csv((root_ / "sim" / "panel.csv").string());
    const auto basis = centered_basis(6, panel.bins_per_trial());
    double lmax = 0.0;
    for (int i = 0; i < panel.neuron_count(); ++i) lmax = std::max(lmax, lambda_max(panel, basis, i));
    std::ostringstream lam;
    lam.precision(17);
    lam << lmax;
    ASSERT_EQ(run_cli("fit --m 6 --lambda " + lam.str() + " --panel " + q(root_ / "sim" / "panel.csv") + " --out " + q(root_ / "fit_max"),
                      root_)
                  .code,
              0);
    EXPECT_EQ(read_matrix_csv((root_ / "fit_max" / "gamma.csv").string()).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(CliPipeline, TinyAlphaMakesEverythingInsignificant) {
    const std::string panel = q(root_ / "sim" / "panel.csv");
    ASSERT_EQ(run_cli("fit --m 6 --lambda 3 --panel " + panel + " --out " + q(root_ / "fit_a"), root_).code, 0);
    ASSERT_EQ(run_cli("infer --alpha 1e-300 --panel " + panel + " --fit-dir " + q(root_ / "fit_a") + " --out " + q(root_ / "inf_a"),
                      root_)
                  .code,
              0);
    EXPECT_EQ(read_matrix_csv((root_ / "inf_a" / "significant.csv").string()).values.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(read_matrix_csv((root_ / "inf_a" / "gamma_filtered.csv").string()).values.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(slurp(root_ / "inf_a" / "network.dot").find(", color=black"), std::string::npos);
    EXPECT_NE(run_cli("infer --alpha 1 --panel " + panel + " --fit-dir " + q(root_ / "fit_a") + " --out " + q(root_ / "inf_b"), root_)
                  .code,
              0);
}

TEST_F(CliPipeline, EvalOfTruthAgainstItself) {
    copy_truth_as_estimate(root_);
    write_text(root_ / "eval.json", R"({ "eval": { "truth_dir": "sim", "fit_dir": "est_is_truth" } })");
    const CliResult r = run_cli("eval --config " + q(root_ / "eval.json") + " --out " + q(root_ / "eval_truth"), root_);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto row = csv_row(root_ / "eval_truth" / "eval_summary.csv", 1);
    EXPECT_EQ(row[2], "0");  // RMSE_Gamma
    EXPECT_EQ(row[5], "1");  // AUC
}

TEST_F(CliPipeline, EvalRejectsMismatchedDimensions) {
    write_text(root_ / "sim_small.json", R"({ "network": { "d": 4 }, "simulation": { "n": 200 } })");
    ASSERT_EQ(run_cli("simulate --config " + q(root_ / "sim_small.json") + " --out " + q(root_ / "sim_small"), root_).code, 0);
    write_text(root_ / "eval_bad.json", R"({ "eval": { "truth_dir": "sim_small", "fit_dir": "est_is_truth" } })");
    copy_truth_as_estimate(root_);
    EXPECT_EQ(run_cli("eval --config " + q(root_ / "eval_bad.json") + " --out " + q(root_ / "eval_bad"), root_).code, 1);
}

TEST(Cli, SingleReplicateSummaryEqualsRow) {
    const auto dir = scratch_dir("cli_eval1");
    write_text(dir / "sc.json", R"({
      "network": { "d": 5 }, "simulation": { "n": 800 }, "basis": { "m": 5 },
      "fit": { "lambda": 4 }, "eval": { "reps": 1, "name": "one" } })");
    const CliResult r = run_cli("eval --config " + q(dir / "sc.json") + " --out " + q(dir / "out"), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = csv_row(dir / "out" / "eval_reps.csv", 1);
    const auto sum = csv_row(dir / "out" / "eval_summary.csv", 1);
    ASSERT_EQ(rep.size(), 14u);
    ASSERT_EQ(sum.size(), 10u);
    EXPECT_EQ(sum[1], "1");
    for (int k = 0; k < 8; ++k) EXPECT_EQ(sum[static_cast<std::size_t>(2 + k)], rep[static_cast<std::size_t>(4 + k)]);
}

TEST(Cli, UnknownConfigKeyIsNamed) {
    const auto dir = scratch_dir("cli_unknown");
    write_text(dir / "bad.json", R"({ "network": { "d": 5, "colour": "red" } })");
    const CliResult r = run_cli("simulate --config " + q(dir / "bad.json") + " --out " + q(dir / "out"), dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("network.colour"), std::string::npos) << r.err;
}

TEST(Cli, InvalidParametersFail) {
    const auto dir = scratch_dir("cli_invalid");
    write_text(dir / "bad.json", R"({ "network": { "d": 5, "sign_mix": 2 } })");
    EXPECT_EQ(run_cli("simulate --config " + q(dir / "bad.json") + " --out " + q(dir / "out"), dir).code, 1);
    EXPECT_EQ(run_cli("infer --panel " + q(dir / "missing.csv") + " --fit-dir " + q(dir) + " --out " + q(dir / "o"), dir).code, 1);
    EXPECT_NE(run_cli("frobnicate", dir).code, 0);
}

TEST(Cli, LargeLowFiringSimulationIsFast) {
    const auto dir = scratch_dir("cli_d50");
    write_text(dir / "sim.json", R"({ "network": { "d": 50 }, "simulation": { "beta": -2.6, "n": 10000 } })");
    const auto start = std::chrono::steady_clock::now();
    const CliResult r = run_cli("simulate --config " + q(dir / "sim.json") + " --out " + q(dir / "out"), dir);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LT(secs, 60.0);
    const auto panel = read_panel_csv((dir / "out" / "panel.csv").string());
    EXPECT_EQ(panel.neuron_count(), 50);
    const double rate = static_cast<double>(std::accumulate(panel.trials.begin(), panel.trials.end(), 0LL, [](long long s, const BinaryMatrix& m) { return s + m.total(); })) / (50.0 * 10000.0);
    EXPECT_GT(rate, 0.03);
    EXPECT_LT(rate, 0.2);
}

TEST(Cli, PrepWithOneSidedAnchors) {
    const auto dir = scratch_dir("cli_prep");
    auto g = rng::substream(21, 0);
    {
        std::ofstream ev(dir / "events.csv");
        ev << "neuron_id,spike_time_s\n";
        for (int trial = 0; trial < 70; ++trial) {
            const double a = 1.0 + trial;
            for (int k = 0; k < 30; ++k) ev << "fast," << a - 0.2 + 0.6 * g.uniform() << "\n";
            for (int k = 0; k < 20; ++k) ev << "mid," << a - 0.2 + 0.6 * g.uniform() << "\n";
            if (trial % 7 == 0) ev << "slow," << a + 0.01 << "\n";
        }
        std::ofstream an(dir / "anchors.csv");
        an << "trial,anchor_time_s,side\n";
        for (int trial = 0; trial < 70; ++trial) an << trial + 1 << "," << 1.0 + trial << ",left\n";
    }
    write_text(dir / "prep.json", R"({ "prep": { "events": "events.csv", "alignments": [ { "name": "stim", "anchors": "anchors.csv" } ] } })");
    const CliResult r = run_cli("prep --config " + q(dir / "prep.json") + " --out " + q(dir / "out"), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("notice"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "out" / "panel_stim_left.csv"));
    EXPECT_FALSE(fs::exists(dir / "out" / "panel_stim_right.csv"));
    const auto summary = read_json((dir / "out" / "prep_summary.json").string());
    ASSERT_EQ(summary["notices"].size(), 1u);
    EXPECT_NE(summary["notices"][0].get<std::string>().find("right"), std::string::npos);

    const auto panel = read_panel_csv((dir / "out" / "panel_stim_left.csv").string());
    EXPECT_EQ(panel.trial_count(), 60);
    EXPECT_EQ(panel.bins_per_trial(), 600);
    EXPECT_EQ(panel.neuron_ids, (std::vector<std::string>{"fast", "mid"}));
    const auto side = read_json((dir / "out" / "panel_stim_left.json").string());
    EXPECT_EQ(side["excluded_ids"], nlohmann::json::array({"slow"}));

    ASSERT_EQ(run_cli("prep --config " + q(dir / "prep.json") + " --out " + q(dir / "again"), dir).code, 0);
    expect_same_tree(dir / "out", dir / "again");
}
