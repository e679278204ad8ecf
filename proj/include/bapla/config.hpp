#pragma once

// Run configuration: a JSON tree with one optional block per concern.
// Unknown keys anywhere are errors naming the full key path.
//
// {
//   "seed": 1, "threads": 0, "out": "runs/cg",
//   "network":    { "d", "kind", "magnitude", "sign_mix", "edge_count", "block_sizes", "p_within", "p_between" },
//   "simulation": { "beta", "n", "trials", "trend": { "family", "mu", "sigma", "shape", "rate", "peak", "amplitude" } },
//   "basis":      { "m", "degree" },
//   "fit":        { "lambda", "max_outer_iters", "max_inner_iters", "tol", "weight_floor",
//                   "lambda_grid_size", "lambda_min_ratio", "per_neuron_lambda" },
//   "infer":      { "alpha" },
//   "eval":       { "reps", "auc_scores", "truth_dir", "fit_dir", "infer_dir", "name" },
//   "prep":       { "events", "alignments": [{ "name", "anchors" }], "pre", "post", "bin_width",
//                   "trials", "min_mean_spikes" },
//   "input":      { "panel", "fit_dir" }
// }
//
// Relative input paths resolve against the directory holding the config file.

#include "bapla/experiment.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapla {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Alignment {
    std::string name;
    std::string anchors;  // anchor CSV path
};

struct PrepConfig {
    std::string events;
    std::vector<Alignment> alignments;
    double pre = 0.2;
    double post = 0.4;
    double bin_width = 0.001;
    int trials = 60;
    double min_mean_spikes = 10.0;
};

struct EvalConfig {
    int reps = 20;
    std::string truth_dir;
    std::string fit_dir;
    std::string infer_dir;
};

struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 0;  // 0: available parallelism
    std::string out = "out";
    Scenario scenario;  // network, simulation, basis, fit, infer and AUC settings
    EvalConfig eval;
    PrepConfig prep;
    std::string panel;
    std::string fit_dir;

    int resolved_threads() const { return threads > 0 ? threads : default_thread_count(); }
};

namespace detail {

using nlohmann::json;

inline std::string key_path(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

inline void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) throw ConfigError("config: '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) throw ConfigError("config: unknown key '" + key_path(path, it.key()) + "'");
    }
}

template <class T>
void read_key(const json& obj, const std::string& path, const char* key, T& target) {
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        target = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: '" + key_path(path, key) + "' has the wrong type");
    }
}

template <class T>
void read_optional(const json& obj, const std::string& path, const char* key, std::optional<T>& target) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return;
    T v{};
    read_key(obj, path, key, v);
    target = v;
}

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    if (path.is_absolute() || base.empty()) return p;
    return (base / path).lexically_normal().string();
}

template <class F>
void wrap(const std::string& path, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config: '" + path + "': " + e.what());
    }
}

} // namespace detail

/// Parses a config tree; `base` is the directory relative paths resolve against.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base = {}) {
    using detail::allow_keys;
    using detail::read_key;
    RunConfig cfg;
    Scenario& sc = cfg.scenario;
    allow_keys(j, "", {"seed", "threads", "out", "network", "simulation", "basis", "fit", "infer", "eval", "prep", "input"});
    read_key(j, "", "seed", cfg.seed);
    read_key(j, "", "threads", cfg.threads);
    if (cfg.threads < 0) throw ConfigError("config: 'threads' must be non-negative");
    read_key(j, "", "out", cfg.out);

    if (auto it = j.find("network"); it != j.end()) {
        const auto& o = *it;
        allow_keys(o, "network", {"d", "kind", "magnitude", "sign_mix", "edge_count", "block_sizes", "p_within", "p_between"});
        read_key(o, "network", "d", sc.network.d);
        std::string kind = to_string(sc.network.kind);
        read_key(o, "network", "kind", kind);
        detail::wrap("network.kind", [&] { sc.network.kind = parse_network_kind(kind); });
        read_key(o, "network", "magnitude", sc.network.magnitude);
        read_key(o, "network", "sign_mix", sc.network.sign_mix);
        read_key(o, "network", "edge_count", sc.network.edge_count);
        read_key(o, "network", "block_sizes", sc.network.block_sizes);
        read_key(o, "network", "p_within", sc.network.p_within);
        read_key(o, "network", "p_between", sc.network.p_between);
        if (sc.network.kind == NetworkKind::stochastic_block && !o.contains("d")) {
            int d = 0;
            for (int b : sc.network.block_sizes) d += b;
            sc.network.d = d;
        }
    }
    if (auto it = j.find("simulation"); it != j.end()) {
        const auto& o = *it;
        allow_keys(o, "simulation", {"beta", "n", "trials", "trend"});
        read_key(o, "simulation", "beta", sc.beta);
        read_key(o, "simulation", "n", sc.n);
        read_key(o, "simulation", "trials", sc.trials);
        if (auto t = o.find("trend"); t != o.end()) {
            const auto& tr = *t;
            allow_keys(tr, "simulation.trend", {"family", "mu", "sigma", "shape", "rate", "peak", "amplitude"});
            std::string fam = "normal";
            read_key(tr, "simulation.trend", "family", fam);
            detail::wrap("simulation.trend.family", [&] { sc.trend.family = parse_trend_family(fam); });
            read_key(tr, "simulation.trend", "mu", sc.trend.mu);
            read_key(tr, "simulation.trend", "sigma", sc.trend.sigma);
            read_key(tr, "simulation.trend", "shape", sc.trend.shape);
            read_key(tr, "simulation.trend", "rate", sc.trend.rate);
            read_key(tr, "simulation.trend", "peak", sc.trend_peak);
            detail::read_optional(tr, "simulation.trend", "amplitude", sc.trend_amplitude);
        }
    }
    if (auto it = j.find("basis"); it != j.end()) {
        allow_keys(*it, "basis", {"m", "degree"});
        read_key(*it, "basis", "m", sc.m);
        read_key(*it, "basis", "degree", sc.degree);
    }
    if (auto it = j.find("fit"); it != j.end()) {
        const auto& o = *it;
        allow_keys(o, "fit", {"lambda", "max_outer_iters", "max_inner_iters", "tol", "weight_floor", "lambda_grid_size",
                              "lambda_min_ratio", "per_neuron_lambda"});
        detail::read_optional(o, "fit", "lambda", sc.lambda);
        read_key(o, "fit", "max_outer_iters", sc.fit.max_outer_iters);
        read_key(o, "fit", "max_inner_iters", sc.fit.max_inner_iters);
        read_key(o, "fit", "tol", sc.fit.tol);
        read_key(o, "fit", "weight_floor", sc.fit.weight_floor);
        read_key(o, "fit", "lambda_grid_size", sc.fit.lambda_grid_size);
        read_key(o, "fit", "lambda_min_ratio", sc.fit.lambda_min_ratio);
        read_key(o, "fit", "per_neuron_lambda", sc.fit.per_neuron_lambda);
    }
    if (auto it = j.find("infer"); it != j.end()) {
        allow_keys(*it, "infer", {"alpha"});
        read_key(*it, "infer", "alpha", sc.alpha);
    }
    if (auto it = j.find("eval"); it != j.end()) {
        const auto& o = *it;
        allow_keys(o, "eval", {"reps", "auc_scores", "truth_dir", "fit_dir", "infer_dir", "name"});
        read_key(o, "eval", "reps", cfg.eval.reps);
        std::string auc = to_string(sc.auc_scores);
        read_key(o, "eval", "auc_scores", auc);
        detail::wrap("eval.auc_scores", [&] { sc.auc_scores = parse_auc_scores(auc); });
        read_key(o, "eval", "truth_dir", cfg.eval.truth_dir);
        read_key(o, "eval", "fit_dir", cfg.eval.fit_dir);
        read_key(o, "eval", "infer_dir", cfg.eval.infer_dir);
        read_key(o, "eval", "name", sc.name);
        if (cfg.eval.reps < 1) throw ConfigError("config: 'eval.reps' must be positive");
    }
    if (auto it = j.find("prep"); it != j.end()) {
        const auto& o = *it;
        allow_keys(o, "prep", {"events", "alignments", "pre", "post", "bin_width", "trials", "min_mean_spikes"});
        read_key(o, "prep", "events", cfg.prep.events);
        read_key(o, "prep", "pre", cfg.prep.pre);
        read_key(o, "prep", "post", cfg.prep.post);
        read_key(o, "prep", "bin_width", cfg.prep.bin_width);
        read_key(o, "prep", "trials", cfg.prep.trials);
        read_key(o, "prep", "min_mean_spikes", cfg.prep.min_mean_spikes);
        if (auto a = o.find("alignments"); a != o.end()) {
            if (!a->is_array()) throw ConfigError("config: 'prep.alignments' must be an array");
            for (std::size_t k = 0; k < a->size(); ++k) {
                const std::string p = "prep.alignments[" + std::to_string(k) + "]";
                allow_keys((*a)[k], p, {"name", "anchors"});
                Alignment al;
                read_key((*a)[k], p, "name", al.name);
                read_key((*a)[k], p, "anchors", al.anchors);
                if (al.name.empty() || al.anchors.empty()) throw ConfigError("config: '" + p + "' needs name and anchors");
                cfg.prep.alignments.push_back(al);
            }
        }
    }
    if (auto it = j.find("input"); it != j.end()) {
        allow_keys(*it, "input", {"panel", "fit_dir"});
        read_key(*it, "input", "panel", cfg.panel);
        read_key(*it, "input", "fit_dir", cfg.fit_dir);
    }

    cfg.panel = detail::resolve_path(cfg.panel, base);
    cfg.fit_dir = detail::resolve_path(cfg.fit_dir, base);
    cfg.eval.truth_dir = detail::resolve_path(cfg.eval.truth_dir, base);
    cfg.eval.fit_dir = detail::resolve_path(cfg.eval.fit_dir, base);
    cfg.eval.infer_dir = detail::resolve_path(cfg.eval.infer_dir, base);
    cfg.prep.events = detail::resolve_path(cfg.prep.events, base);
    for (auto& a : cfg.prep.alignments) a.anchors = detail::resolve_path(a.anchors, base);
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(j, std::filesystem::path(path).parent_path());
}

/// Fully resolved configuration. The thread count is left out: results do not
/// depend on it.
inline nlohmann::json to_json(const RunConfig& cfg) {
    const Scenario& sc = cfg.scenario;
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    j["network"] = {{"d", sc.network.d},
                    {"kind", to_string(sc.network.kind)},
                    {"magnitude", sc.network.magnitude},
                    {"sign_mix", sc.network.sign_mix},
                    {"edge_count", sc.network.edge_count},
                    {"block_sizes", sc.network.block_sizes},
                    {"p_within", sc.network.p_within},
                    {"p_between", sc.network.p_between}};
    nlohmann::json trend = {{"family", sc.trend.family == TrendFamily::normal_pdf   ? "normal"
                                       : sc.trend.family == TrendFamily::gamma_pdf ? "gamma"
                                                                                   : "zero"},
                            {"mu", sc.trend.mu},
                            {"sigma", sc.trend.sigma},
                            {"shape", sc.trend.shape},
                            {"rate", sc.trend.rate},
                            {"peak", sc.trend_peak}};
    trend["amplitude"] = sc.n >= 1 ? nlohmann::json(sc.amplitude()) : nlohmann::json(nullptr);
    j["simulation"] = {{"beta", sc.beta}, {"n", sc.n}, {"trials", sc.trials}, {"trend", trend}};
    j["basis"] = {{"m", sc.m}, {"degree", sc.degree}};
    j["fit"] = {{"lambda", sc.lambda ? nlohmann::json(*sc.lambda) : nlohmann::json(nullptr)},
                {"max_outer_iters", sc.fit.max_outer_iters},
                {"max_inner_iters", sc.fit.max_inner_iters},
                {"tol", sc.fit.tol},
                {"weight_floor", sc.fit.weight_floor},
                {"lambda_grid_size", sc.fit.lambda_grid_size},
                {"lambda_min_ratio", sc.fit.lambda_min_ratio},
                {"per_neuron_lambda", sc.fit.per_neuron_lambda}};
    j["infer"] = {{"alpha", sc.alpha}};
    j["eval"] = {{"reps", cfg.eval.reps},
                 {"auc_scores", to_string(sc.auc_scores)},
                 {"truth_dir", cfg.eval.truth_dir},
                 {"fit_dir", cfg.eval.fit_dir},
                 {"infer_dir", cfg.eval.infer_dir},
                 {"name", sc.name}};
    nlohmann::json aligns = nlohmann::json::array();
    for (const auto& a : cfg.prep.alignments) aligns.push_back({{"name", a.name}, {"anchors", a.anchors}});
    j["prep"] = {{"events", cfg.prep.events},
                 {"alignments", aligns},
                 {"pre", cfg.prep.pre},
                 {"post", cfg.prep.post},
                 {"bin_width", cfg.prep.bin_width},
                 {"trials", cfg.prep.trials},
                 {"min_mean_spikes", cfg.prep.min_mean_spikes}};
    j["input"] = {{"panel", cfg.panel}, {"fit_dir", cfg.fit_dir}};
    return j;
}

} // namespace bapla
