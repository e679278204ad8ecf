// bapla: simulate, fit, infer, eval and prep subcommands.
//
//   bapla simulate --config sim.json --out runs/sim
//   bapla fit      --config fit.json --panel runs/sim/panel.csv --out runs/fit
//   bapla infer    --panel runs/sim/panel.csv --fit-dir runs/fit --out runs/infer --alpha 0.05
//   bapla eval     --config scenario.json --threads 4 --out runs/eval
//   bapla prep     --config prep.json --out runs/prep

#include "bapla/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> out;
    std::optional<double> lambda;
    std::optional<double> alpha;
    std::optional<int> m;
    std::optional<std::string> panel;
    std::optional<std::string> fit_dir;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "random seed (unsigned 64-bit)");
    cmd->add_option("--threads", o.threads, "worker threads; 0 uses all cores")->check(CLI::NonNegativeNumber);
    cmd->add_option("--out", o.out, "output directory");
}

bapla::RunConfig resolve(const Overrides& o) {
    bapla::RunConfig cfg = o.config.empty() ? bapla::parse_config(nlohmann::json::object()) : bapla::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.threads) cfg.threads = *o.threads;
    if (o.out) cfg.out = *o.out;
    if (o.lambda) cfg.scenario.lambda = *o.lambda;
    if (o.alpha) cfg.scenario.alpha = *o.alpha;
    if (o.m) cfg.scenario.m = *o.m;
    if (o.panel) cfg.panel = *o.panel;
    if (o.fit_dir) cfg.fit_dir = *o.fit_dir;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse lag-1 logistic network estimation with non-stationary trends"};
    app.require_subcommand(1);
    Overrides o;

    auto* simulate = app.add_subcommand("simulate", "simulate a spike panel and its ground truth");
    add_common(simulate, o);

    auto* fit = app.add_subcommand("fit", "penalised fit with BIC-selected or fixed lambda");
    add_common(fit, o);
    fit->add_option("--panel", o.panel, "input panel CSV");
    fit->add_option("--lambda", o.lambda, "fixed penalty; skips BIC selection")->check(CLI::NonNegativeNumber);
    auto* m_opt = fit->add_option("--m", o.m, "number of trend basis functions (0: no trend)")->check(CLI::NonNegativeNumber);
    fit->add_option("--trend-basis", o.m, "alias for --m")->check(CLI::NonNegativeNumber)->excludes(m_opt);

    auto* infer = app.add_subcommand("infer", "confidence intervals, filtered network and DOT graph");
    add_common(infer, o);
    infer->add_option("--panel", o.panel, "input panel CSV");
    infer->add_option("--fit-dir", o.fit_dir, "directory written by 'fit'");
    infer->add_option("--alpha", o.alpha, "significance level");

    auto* eval = app.add_subcommand("eval", "score artifacts against truth, or run a Monte Carlo scenario");
    add_common(eval, o);
    eval->add_option("--lambda", o.lambda, "fixed penalty for scenario runs")->check(CLI::NonNegativeNumber);
    eval->add_option("--alpha", o.alpha, "significance level for scenario runs");
    eval->add_option("--m", o.m, "trend basis size for scenario runs")->check(CLI::NonNegativeNumber);

    auto* prep = app.add_subcommand("prep", "bin, align and filter spike events into panels");
    add_common(prep, o);

    CLI11_PARSE(app, argc, argv);

    try {
        const bapla::RunConfig cfg = resolve(o);
        if (simulate->parsed()) bapla::cmd_simulate(cfg, std::cerr);
        else if (fit->parsed()) bapla::cmd_fit(cfg, std::cerr);
        else if (infer->parsed()) bapla::cmd_infer(cfg, std::cerr);
        else if (eval->parsed()) bapla::cmd_eval(cfg, std::cerr);
        else if (prep->parsed()) bapla::cmd_prep(cfg, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
