#pragma once

// Subcommand bodies behind the command-line tool. Each one reads a resolved
// RunConfig, writes its artifacts into cfg.out together with
// resolved_config.json, and throws on error. Warnings go to `log`.

#include "bapla/config.hpp"
#include "bapla/experiment.hpp"
#include "bapla/io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapla {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Shared helpers

inline std::string sidecar_path(const std::string& panel_csv) {
    fs::path p(panel_csv);
    p.replace_extension(".json");
    return p.string();
}

/// Panel plus its JSON sidecar when one exists next to it.
struct LoadedPanel {
    SpikePanel panel;
    nlohmann::json sidecar = nlohmann::json::object();
};

inline LoadedPanel load_panel(const std::string& path) {
    if (path.empty()) throw ConfigError("no input panel given (set input.panel or pass --panel)");
    LoadedPanel lp;
    lp.panel = read_panel_csv(path);
    const std::string side = sidecar_path(path);
    if (fs::exists(side)) {
        lp.sidecar = read_json(side);
        if (lp.sidecar.contains("bin_width_ms")) lp.panel.bin_width_ms = lp.sidecar["bin_width_ms"].get<double>();
    }
    return lp;
}

inline std::vector<std::string> excluded_ids_of(const nlohmann::json& sidecar) {
    if (!sidecar.contains("excluded_ids")) return {};
    return sidecar["excluded_ids"].get<std::vector<std::string>>();
}

inline void prepare_out(const RunConfig& cfg) {
    if (cfg.out.empty()) throw ConfigError("no output directory given");
    fs::create_directories(cfg.out);
    nlohmann::json j = to_json(cfg);
    j.erase("out");
    write_json(j, (fs::path(cfg.out) / "resolved_config.json").string());
}

inline std::string out_file(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.out) / name).string(); }

inline void write_vector_csv(const Eigen::VectorXd& v, const std::vector<std::string>& ids, const std::string& column,
                             const std::string& path) {
    write_matrix_csv(Eigen::MatrixXd(v), ids, {column}, path);
}

inline void write_panel_with_sidecar(const SpikePanel& panel, nlohmann::json sidecar, const std::string& path) {
    write_panel_csv(panel, path);
    sidecar["bin_width_ms"] = panel.bin_width_ms;
    sidecar["neuron_ids"] = panel.neuron_ids;
    sidecar["trials"] = panel.trial_count();
    sidecar["bins_per_trial"] = panel.bins_per_trial();
    if (!sidecar.contains("excluded_ids")) sidecar["excluded_ids"] = nlohmann::json::array();
    write_json(sidecar, sidecar_path(path));
}

// ---------------------------------------------------------------------------
// simulate

inline void cmd_simulate(const RunConfig& cfg, std::ostream& log) {
    const Scenario& sc = cfg.scenario;
    sc.validate();
    prepare_out(cfg);
    const SimulatedData sim = simulate_scenario(sc, cfg.seed);
    const auto& ids = sim.panel.neuron_ids;

    nlohmann::json side;
    side["source"] = "simulate";
    side["seed"] = cfg.seed;
    write_panel_with_sidecar(sim.panel, side, out_file(cfg, "panel.csv"));
    write_matrix_csv(sim.gamma, ids, ids, out_file(cfg, "truth_gamma.csv"));
    write_vector_csv(sim.beta, ids, "beta", out_file(cfg, "truth_beta.csv"));
    write_matrix_csv(sim.trend, ids, numbered_labels("t_", sim.trend.cols()), out_file(cfg, "truth_f.csv"));

    nlohmann::json meta;
    meta["generator"] = rng::kGeneratorName;
    meta["seed"] = cfg.seed;
    meta["network_seed"] = rng::derive_seed(cfg.seed, 0);
    meta["simulation_seed"] = rng::derive_seed(cfg.seed, 1);
    meta["edge_count"] = edge_count(sim.gamma);
    meta["trend_amplitude"] = sc.amplitude();
    meta["trend_max_abs"] = sim.trend.cwiseAbs().maxCoeff();
    meta["spike_fraction"] = [&] {
        long long total = 0;
        for (const auto& tr : sim.panel.trials) total += tr.total();
        return static_cast<double>(total) /
               (static_cast<double>(sim.panel.trial_count()) * sim.panel.bins_per_trial() * sim.panel.neuron_count());
    }();
    meta["config"] = to_json(cfg);
    meta["config"].erase("out");
    write_json(meta, out_file(cfg, "simulation_meta.json"));
    log << "simulated " << sim.panel.trial_count() << " trial(s) of " << sc.n << " bins for " << sc.network.d
        << " neurons (" << edge_count(sim.gamma) << " edges)\n";
}

// ---------------------------------------------------------------------------
// fit

inline void cmd_fit(const RunConfig& cfg, std::ostream& log) {
    const Scenario& sc = cfg.scenario;
    sc.fit.validate();
    if (sc.m < 0) throw ConfigError("config: 'basis.m' must be non-negative");
    const LoadedPanel lp = load_panel(cfg.panel);
    const SpikePanel& panel = lp.panel;
    panel.validate();
    const int threads = cfg.resolved_threads();
    const int degree = basis_degree_for(sc.m, sc.degree);
    const BasisMatrix basis = centered_basis(sc.m, panel.bins_per_trial(), degree);
    prepare_out(cfg);

    nlohmann::json meta;
    ModelFit model;
    if (sc.lambda) {
        model = fit_network(panel, basis, *sc.lambda, sc.fit, threads);
        meta["lambda_source"] = "fixed";
    } else {
        const LambdaSelection sel = select_lambda(panel, basis, sc.fit, threads);
        meta["lambda_source"] = "bic";
        meta["lambda_per_neuron_optima"] = sel.per_neuron.front();
        if (sc.fit.per_neuron_lambda) {
            model = fit_network(panel, basis, sel.lambda_star, sc.fit, threads, &sel.per_neuron.front());
        } else {
            model = fit_network(panel, basis, sel.lambda_star, sc.fit, threads);
        }
    }
    const auto& ids = panel.neuron_ids;
    write_matrix_csv(model.interaction, ids, ids, out_file(cfg, "gamma.csv"));
    write_vector_csv(model.beta(), ids, "beta", out_file(cfg, "beta.csv"));
    write_matrix_csv(model.spline_coefs(), ids, numbered_labels("c_", sc.m), out_file(cfg, "spline_coefs.csv"));
    write_matrix_csv(model.fhat(), ids, numbered_labels("t_", panel.bins_per_trial()), out_file(cfg, "fhat.csv"));

    meta["lambda_star"] = model.lambda_star;
    meta["basis"] = {{"m", sc.m}, {"degree", degree}};
    meta["n_effective"] = panel.effective_length();
    meta["options"] = to_json(cfg)["fit"];
    nlohmann::json neurons = nlohmann::json::array();
    int unconverged = 0;
    for (std::size_t i = 0; i < model.fits.size(); ++i) {
        const auto& f = model.fits[i];
        neurons.push_back({{"id", ids[i]},
                           {"lambda", f.lambda},
                           {"converged", f.converged},
                           {"iterations", f.iterations},
                           {"neg_loglik", f.neg_loglik},
                           {"objective", f.objective},
                           {"nonzeros", f.nonzeros()},
                           {"bic", bic(f, panel.effective_length())}});
        if (!f.converged) {
            ++unconverged;
            log << "warning: fit for " << ids[i] << " did not converge in " << f.iterations << " IRLS steps\n";
        }
    }
    meta["neurons"] = neurons;
    meta["all_converged"] = unconverged == 0;
    write_json(meta, out_file(cfg, "fit_meta.json"));
    log << "fitted " << ids.size() << " neurons at lambda " << format_real(model.lambda_star) << " ("
        << edge_count(model.interaction) << " nonzero off-diagonal entries)\n";
}

/// Rebuilds a ModelFit from the artifacts of cmd_fit.
inline ModelFit load_model_fit(const std::string& dir, const SpikePanel& panel) {
    if (dir.empty()) throw ConfigError("no fit directory given (set input.fit_dir or pass --fit-dir)");
    const fs::path base(dir);
    for (const char* f : {"fit_meta.json", "gamma.csv", "beta.csv", "spline_coefs.csv"}) {
        if (!fs::exists(base / f)) throw IoError("missing fit artifact " + (base / f).string());
    }
    const auto meta = read_json((base / "fit_meta.json").string());
    const int m = meta.at("basis").at("m").get<int>();
    const int degree = meta.at("basis").at("degree").get<int>();
    const auto gamma = read_matrix_csv((base / "gamma.csv").string());
    const auto beta = read_matrix_csv((base / "beta.csv").string());
    const auto coefs = read_matrix_csv((base / "spline_coefs.csv").string());
    const Eigen::Index d = panel.neuron_count();
    if (gamma.values.rows() != d || gamma.values.cols() != d || beta.values.rows() != d || coefs.values.rows() != d ||
        coefs.values.cols() != m) {
        throw IoError("fit artifacts in " + dir + " do not match the panel dimensions");
    }
    if (gamma.row_ids != panel.neuron_ids) throw IoError("fit artifacts in " + dir + " list different neuron ids than the panel");
    ModelFit model;
    model.basis = m == 0 ? BasisMatrix::none(panel.bins_per_trial()) : centered_basis(m, panel.bins_per_trial(), degree);
    model.lambda_star = meta.at("lambda_star").get<double>();
    model.interaction = gamma.values;
    for (Eigen::Index i = 0; i < d; ++i) {
        NeuronFit f;
        f.beta = beta.values(i, 0);
        f.gamma = gamma.values.row(i).transpose();
        f.spline_coefs = coefs.values.row(i).transpose();
        f.lambda = meta.at("neurons").at(static_cast<std::size_t>(i)).at("lambda").get<double>();
        model.fits.push_back(std::move(f));
    }
    return model;
}

// ---------------------------------------------------------------------------
// infer

inline void cmd_infer(const RunConfig& cfg, std::ostream& log) {
    const double alpha = cfg.scenario.alpha;
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("config: 'infer.alpha' must lie in (0, 1)");
    const LoadedPanel lp = load_panel(cfg.panel);
    const ModelFit model = load_model_fit(cfg.fit_dir, lp.panel);
    prepare_out(cfg);
    const DesparsifiedFit desp = desparsify(model, lp.panel, cfg.resolved_threads());
    const CIMatrix cis = confidence_intervals(desp, alpha);
    const InteractionMatrix filtered = significance_filter(model, cis);
    const auto& ids = lp.panel.neuron_ids;
    write_matrix_csv(desp.gamma_desp, ids, ids, out_file(cfg, "gamma_desp.csv"));
    write_matrix_csv(cis.lower, ids, ids, out_file(cfg, "ci_lower.csv"));
    write_matrix_csv(cis.upper, ids, ids, out_file(cfg, "ci_upper.csv"));
    write_matrix_csv(cis.significant, ids, ids, out_file(cfg, "significant.csv"));
    write_matrix_csv(filtered, ids, ids, out_file(cfg, "gamma_filtered.csv"));
    export_dot(model.interaction, &cis.significant, ids, excluded_ids_of(lp.sidecar), out_file(cfg, "network.dot"));

    nlohmann::json meta;
    meta["alpha"] = alpha;
    meta["quantile"] = normal_quantile(1.0 - alpha / 2.0);
    meta["n_effective"] = desp.n_effective;
    nlohmann::json neurons = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        neurons.push_back({{"id", ids[i]},
                           {"theta_condition", desp.theta_condition[i]},
                           {"ridge_applied", static_cast<bool>(desp.ridge_applied[i])},
                           {"ridge", desp.ridge[i]}});
        if (desp.ridge_applied[i]) {
            log << "warning: Fisher information for " << ids[i] << " is ill-conditioned (condition "
                << format_real(desp.theta_condition[i]) << "); ridge " << format_real(desp.ridge[i]) << " applied\n";
        }
    }
    meta["neurons"] = neurons;
    meta["significant_edges"] = edge_count(filtered);
    write_json(meta, out_file(cfg, "inference_meta.json"));
    log << edge_count(filtered) << " significant off-diagonal edges at alpha " << format_real(alpha) << "\n";
}

// ---------------------------------------------------------------------------
// eval

inline const std::vector<std::string>& eval_columns() {
    static const std::vector<std::string> cols{"RMSE_Gamma", "MSE_beta0", "MSE_f",    "AUC",
                                               "AvgCov_s",   "AvgCov_sc", "AvgLen_s", "AvgLen_sc"};
    return cols;
}

inline std::string eval_fields(const EvalReport& r) {
    std::string s;
    for (double v : {r.rmse_gamma, r.mse_beta, r.mse_f, r.auc, r.avgcov_s, r.avgcov_sc, r.avglen_s, r.avglen_sc}) {
        s += ',';
        s += std::isfinite(v) ? format_real(v) : std::string("NA");
    }
    return s;
}

inline void write_eval_summary(const std::string& scenario, const EvalReport& s, const std::string& path) {
    auto out = detail::open_out(path);
    out << "scenario,reps";
    for (const auto& c : eval_columns()) out << ',' << c;
    out << '\n' << scenario << ',' << s.rep_count << eval_fields(s) << '\n';
}

inline void write_eval_reps(const std::string& scenario, const std::vector<ReplicateResult>& reps, const std::string& path) {
    auto out = detail::open_out(path);
    out << "scenario,rep,seed,lambda_star";
    for (const auto& c : eval_columns()) out << ',' << c;
    out << ",significant_edges,converged\n";
    for (std::size_t r = 0; r < reps.size(); ++r) {
        const auto& x = reps[r];
        out << scenario << ',' << (r + 1) << ',' << x.seed << ',' << format_real(x.lambda_star) << eval_fields(x.report) << ','
            << x.significant_edges << ',' << (x.all_converged ? 1 : 0) << '\n';
    }
}

/// Scores fit (and optionally inference) artifacts against truth artifacts.
inline ReplicateResult evaluate_artifacts(const std::string& truth_dir, const std::string& fit_dir, const std::string& infer_dir,
                                          AucScores auc_scores) {
    const fs::path t(truth_dir), f(fit_dir);
    const auto tg = read_matrix_csv((t / "truth_gamma.csv").string());
    const auto tb = read_matrix_csv((t / "truth_beta.csv").string());
    const auto tf = read_matrix_csv((t / "truth_f.csv").string());
    const auto eg = read_matrix_csv((f / "gamma.csv").string());
    const auto eb = read_matrix_csv((f / "beta.csv").string());
    const auto ef = read_matrix_csv((f / "fhat.csv").string());
    auto same_shape = [](const LabeledMatrix& a, const LabeledMatrix& b) {
        return a.values.rows() == b.values.rows() && a.values.cols() == b.values.cols();
    };
    if (!same_shape(tg, eg) || !same_shape(tb, eb) || !same_shape(tf, ef)) {
        throw std::invalid_argument("truth and estimate artifacts have mismatched dimensions");
    }
    ReplicateResult res;
    EvalReport& r = res.report;
    r.rmse_gamma = rmse_gamma(eg.values, tg.values);
    r.mse_beta = mse_vector(eb.values.col(0), tb.values.col(0));
    r.mse_f = mse_curves(ef.values, tf.values);
    r.avgcov_s = r.avgcov_sc = r.avglen_s = r.avglen_sc = std::nan("");
    Eigen::MatrixXd scores = eg.values.cwiseAbs();
    if (!infer_dir.empty()) {
        const fs::path in(infer_dir);
        CIMatrix cis;
        cis.lower = read_matrix_csv((in / "ci_lower.csv").string()).values;
        cis.upper = read_matrix_csv((in / "ci_upper.csv").string()).values;
        if (cis.lower.rows() != tg.values.rows() || cis.lower.cols() != tg.values.cols() || cis.upper.rows() != cis.lower.rows() ||
            cis.upper.cols() != cis.lower.cols()) {
            throw std::invalid_argument("interval artifacts have mismatched dimensions");
        }
        cis.significant = (cis.lower.array() > 0.0 || cis.upper.array() < 0.0).matrix();
        const CoverageStats cov = coverage_stats(cis, tg.values);
        r.avgcov_s = cov.avgcov_s;
        r.avgcov_sc = cov.avgcov_sc;
        r.avglen_s = cov.avglen_s;
        r.avglen_sc = cov.avglen_sc;
        for (Eigen::Index i = 0; i < cis.significant.rows(); ++i)
            for (Eigen::Index j = 0; j < cis.significant.cols(); ++j)
                if (i != j && cis.significant(i, j)) ++res.significant_edges;
        if (auc_scores == AucScores::desparsified) scores = read_matrix_csv((in / "gamma_desp.csv").string()).values.cwiseAbs();
    } else if (auc_scores == AucScores::desparsified) {
        throw ConfigError("desparsified AUC scores need eval.infer_dir");
    }
    r.auc = auc_support(scores, support_of(tg.values));
    return res;
}

inline void cmd_eval(const RunConfig& cfg, std::ostream& log) {
    const Scenario& sc = cfg.scenario;
    const bool artifact_mode = !cfg.eval.truth_dir.empty() || !cfg.eval.fit_dir.empty();
    if (artifact_mode) {
        if (cfg.eval.truth_dir.empty() || cfg.eval.fit_dir.empty()) {
            throw ConfigError("config: 'eval.truth_dir' and 'eval.fit_dir' must be given together");
        }
        const ReplicateResult res = evaluate_artifacts(cfg.eval.truth_dir, cfg.eval.fit_dir, cfg.eval.infer_dir, sc.auc_scores);
        prepare_out(cfg);
        write_eval_reps(sc.name, {res}, out_file(cfg, "eval_reps.csv"));
        write_eval_summary(sc.name, res.report, out_file(cfg, "eval_summary.csv"));
        log << "RMSE_Gamma " << format_real(res.report.rmse_gamma) << ", AUC " << format_real(res.report.auc) << "\n";
        return;
    }
    sc.validate();
    prepare_out(cfg);
    const auto reps = run_scenario(sc, cfg.eval.reps, cfg.seed, cfg.resolved_threads());
    const EvalReport summary = summarize(reps);
    write_eval_reps(sc.name, reps, out_file(cfg, "eval_reps.csv"));
    write_eval_summary(sc.name, summary, out_file(cfg, "eval_summary.csv"));
    int unconverged = 0;
    for (const auto& r : reps) unconverged += r.all_converged ? 0 : 1;
    if (unconverged > 0) log << "warning: " << unconverged << " replicate(s) contain non-converged fits\n";
    log << sc.name << ": " << reps.size() << " reps, RMSE_Gamma " << format_real(summary.rmse_gamma) << ", AUC "
        << format_real(summary.auc) << ", AvgCov_s " << format_real(summary.avgcov_s) << ", AvgCov_sc "
        << format_real(summary.avgcov_sc) << "\n";
}

// ---------------------------------------------------------------------------
// prep

/// Trial-averaged firing rate in Hz, d x n_trial.
inline Eigen::MatrixXd psth(const SpikePanel& panel) {
    const int d = panel.neuron_count();
    const int n = panel.bins_per_trial();
    Eigen::MatrixXd rate = Eigen::MatrixXd::Zero(d, n);
    for (const auto& tr : panel.trials)
        for (int t = 0; t < n; ++t)
            for (int i = 0; i < d; ++i) rate(i, t) += tr(t, i);
    if (panel.trial_count() > 0) rate /= static_cast<double>(panel.trial_count()) * panel.bin_width_ms / 1000.0;
    return rate;
}

inline void cmd_prep(const RunConfig& cfg, std::ostream& log) {
    const PrepConfig& p = cfg.prep;
    if (p.events.empty()) throw ConfigError("config: 'prep.events' is required");
    if (p.alignments.empty()) throw ConfigError("config: 'prep.alignments' needs at least one entry");
    if (p.trials < 1) throw ConfigError("config: 'prep.trials' must be positive");
    const EventList events = read_event_csv(p.events);
    std::vector<std::string> ids;
    for (const auto& e : events) ids.push_back(e.neuron_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    prepare_out(cfg);

    nlohmann::json summary;
    summary["datasets"] = nlohmann::json::array();
    summary["notices"] = nlohmann::json::array();
    for (const auto& al : p.alignments) {
        const auto anchors = read_anchor_csv(al.anchors);
        for (const char* side : {"left", "right"}) {
            const std::string tag = al.name + "_" + side;
            TrialWindow window;
            window.pre = p.pre;
            window.post = p.post;
            window.bin_width = p.bin_width;
            std::vector<int> trial_numbers;
            for (const auto& a : anchors) {
                if (a.side == side) {
                    window.anchors.push_back(a.time_s);
                    trial_numbers.push_back(a.trial);
                }
            }
            if (window.anchors.empty()) {
                const std::string notice = tag + ": no anchors with side=" + side + "; panel not written";
                summary["notices"].push_back(notice);
                log << "notice: " << notice << "\n";
                continue;
            }
            BinningStats stats;
            const SpikePanel binned = bin_events(events, window, ids, &stats);
            std::vector<int> kept;
            SpikePanel trials_kept;
            try {
                trials_kept = filter_trials(binned, p.trials, &kept);
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument(tag + ": " + e.what());
            }
            NeuronFilterResult nf;
            try {
                nf = filter_neurons(trials_kept, p.min_mean_spikes);
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument(tag + ": " + e.what());
            }
            nlohmann::json side_meta;
            side_meta["source"] = "prep";
            side_meta["alignment"] = al.name;
            side_meta["side"] = side;
            side_meta["window"] = {{"pre_s", p.pre}, {"post_s", p.post}, {"bin_width_s", p.bin_width}};
            nlohmann::json kept_anchors = nlohmann::json::array();
            for (int k : kept)
                kept_anchors.push_back({{"trial", trial_numbers[static_cast<std::size_t>(k)]},
                                        {"anchor_time_s", window.anchors[static_cast<std::size_t>(k)]}});
            side_meta["anchors"] = kept_anchors;
            side_meta["filters"] = {{"trials", p.trials}, {"min_mean_spikes", p.min_mean_spikes}};
            side_meta["excluded_ids"] = nf.excluded_ids;
            side_meta["dropped_events"] = stats.dropped_events;
            side_meta["clipped_bins"] = stats.clipped_bins;
            const std::string panel_path = out_file(cfg, "panel_" + tag + ".csv");
            write_panel_with_sidecar(nf.panel, side_meta, panel_path);
            write_matrix_csv(psth(nf.panel), nf.panel.neuron_ids, numbered_labels("bin_", nf.panel.bins_per_trial()),
                             out_file(cfg, "psth_" + tag + ".csv"));
            summary["datasets"].push_back({{"name", tag},
                                           {"panel", "panel_" + tag + ".csv"},
                                           {"neurons", nf.panel.neuron_count()},
                                           {"excluded", nf.excluded_ids.size()},
                                           {"trials", nf.panel.trial_count()},
                                           {"bins_per_trial", nf.panel.bins_per_trial()}});
            log << tag << ": " << nf.panel.trial_count() << " trials x " << nf.panel.bins_per_trial() << " bins, "
                << nf.panel.neuron_count() << " neurons kept, " << nf.excluded_ids.size() << " excluded\n";
        }
    }
    write_json(summary, out_file(cfg, "prep_summary.json"));
}

} // namespace bapla
