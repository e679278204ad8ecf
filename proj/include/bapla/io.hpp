#pragma once

// Spike-event ingestion (binning, trial alignment, trial/neuron filters) and
// the CSV / JSON / DOT file formats.
//
//   events   neuron_id,spike_time_s
//   anchors  trial,anchor_time_s,side          side in {left, right}
//   panel    trial,t,<neuron ids...>           1-based trial and bin, 0/1 values
//   matrix   neuron,<column labels...>         one row per neuron
//
// Floats are written with 9 significant digits.

#include "bapla/infer.hpp"
#include "bapla/panel.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapla {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

[[noreturn]] inline void fail(const std::string& path, long long line, const std::string& what) {
    throw IoError(path + ":" + std::to_string(line) + ": " + what);
}

inline double parse_real(const std::string& s, const std::string& path, long long line) {
    const std::string t = trim(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        fail(path, line, "expected a number, got '" + t + "'");
    }
    if (used != t.size()) fail(path, line, "expected a number, got '" + t + "'");
    return v;
}

inline long long parse_int(const std::string& s, const std::string& path, long long line) {
    const std::string t = trim(s);
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(t, &used);
    } catch (const std::exception&) {
        fail(path, line, "expected an integer, got '" + t + "'");
    }
    if (used != t.size()) fail(path, line, "expected an integer, got '" + t + "'");
    return v;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    return out;
}

inline void expect_header(const std::vector<std::string>& got, const std::vector<std::string>& want,
                          const std::string& path) {
    bool ok = got.size() >= want.size();
    for (std::size_t k = 0; ok && k < want.size(); ++k) ok = trim(got[k]) == want[k];
    if (!ok) {
        std::string w;
        for (std::size_t k = 0; k < want.size(); ++k) w += (k ? "," : "") + want[k];
        fail(path, 1, "header must start with '" + w + "'");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Events and anchors

struct SpikeEvent {
    std::string neuron_id;
    double time_s = 0.0;

    friend bool operator==(const SpikeEvent&, const SpikeEvent&) = default;
};

using EventList = std::vector<SpikeEvent>;

inline void sort_events(EventList& events) {
    std::stable_sort(events.begin(), events.end(), [](const SpikeEvent& a, const SpikeEvent& b) { return a.time_s < b.time_s; });
}

inline EventList read_event_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line)) detail::fail(path, 1, "empty file");
    const auto header = detail::split_csv(line);
    detail::expect_header(header, {"neuron_id", "spike_time_s"}, path);
    if (header.size() != 2) detail::fail(path, 1, "expected exactly 2 columns");
    EventList events;
    long long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 2) detail::fail(path, lineno, "expected 2 fields, got " + std::to_string(f.size()));
        const std::string id = detail::trim(f[0]);
        if (id.empty()) detail::fail(path, lineno, "empty neuron_id");
        const double t = detail::parse_real(f[1], path, lineno);
        if (!(t >= 0.0) || !std::isfinite(t)) detail::fail(path, lineno, "spike time must be finite and non-negative");
        events.push_back({id, t});
    }
    sort_events(events);
    return events;
}

inline void write_event_csv(const EventList& events, const std::string& path) {
    auto out = detail::open_out(path);
    out << "neuron_id,spike_time_s\n";
    for (const auto& e : events) out << e.neuron_id << ',' << format_real(e.time_s) << '\n';
}

struct Anchor {
    int trial = 0;
    double time_s = 0.0;
    std::string side;  // "left", "right" or empty
};

inline std::vector<Anchor> read_anchor_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line)) detail::fail(path, 1, "empty file");
    const auto header = detail::split_csv(line);
    detail::expect_header(header, {"trial", "anchor_time_s", "side"}, path);
    std::vector<Anchor> anchors;
    long long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 3) detail::fail(path, lineno, "expected 3 fields, got " + std::to_string(f.size()));
        Anchor a;
        a.trial = static_cast<int>(detail::parse_int(f[0], path, lineno));
        a.time_s = detail::parse_real(f[1], path, lineno);
        a.side = detail::trim(f[2]);
        if (a.side != "left" && a.side != "right") detail::fail(path, lineno, "side must be 'left' or 'right'");
        anchors.push_back(a);
    }
    return anchors;
}

// ---------------------------------------------------------------------------
// Binning and filters

struct TrialWindow {
    std::vector<double> anchors;  // seconds
    double pre = 0.2;             // seconds before the anchor
    double post = 0.4;            // seconds after the anchor
    double bin_width = 0.001;     // seconds

    int bin_count() const {
        if (!(pre >= 0.0 && post >= 0.0 && pre + post > 0.0)) throw std::invalid_argument("window needs pre, post >= 0 and pre + post > 0");
        if (!(bin_width > 0.0)) throw std::invalid_argument("bin width must be positive");
        const double bins = (pre + post) / bin_width;
        const double rounded = std::round(bins);
        if (std::abs(bins - rounded) > 1e-6 * std::max(1.0, rounded)) {
            throw std::invalid_argument("window length is not a whole number of bins");
        }
        return static_cast<int>(rounded);
    }
};

struct BinningStats {
    long long events_in_windows = 0;
    long long dropped_events = 0;  // outside every window
    long long clipped_bins = 0;    // bins that held more than one spike
};

/// One trial per anchor; bin b of a trial covers
/// [anchor - pre + b*delta, anchor - pre + (b+1)*delta). Values are clipped to 1.
/// Neuron order is `neuron_ids` when given, otherwise the sorted distinct ids.
inline SpikePanel bin_events(const EventList& events, const TrialWindow& window,
                             std::optional<std::vector<std::string>> neuron_ids = std::nullopt,
                             BinningStats* stats = nullptr) {
    const int bins = window.bin_count();
    std::vector<std::string> ids;
    if (neuron_ids) {
        ids = *neuron_ids;
    } else {
        for (const auto& e : events) ids.push_back(e.neuron_id);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    }
    std::map<std::string, int> column;
    for (std::size_t k = 0; k < ids.size(); ++k) column.emplace(ids[k], static_cast<int>(k));

    EventList sorted = events;
    sort_events(sorted);
    std::vector<double> times(sorted.size());
    for (std::size_t k = 0; k < sorted.size(); ++k) times[k] = sorted[k].time_s;

    SpikePanel panel;
    panel.neuron_ids = ids;
    panel.bin_width_ms = window.bin_width * 1000.0;
    BinningStats st;
    std::vector<char> used(sorted.size(), 0);
    std::vector<std::uint16_t> counts;
    for (double anchor : window.anchors) {
        BinaryMatrix trial(bins, static_cast<int>(ids.size()));
        counts.assign(static_cast<std::size_t>(bins) * ids.size(), 0);
        const double lo = anchor - window.pre;
        const double hi = anchor + window.post;
        auto first = std::lower_bound(times.begin(), times.end(), lo - window.bin_width);
        for (auto it = first; it != times.end() && *it < hi + window.bin_width; ++it) {
            const std::size_t k = static_cast<std::size_t>(it - times.begin());
            const double rel = (sorted[k].time_s - anchor) + window.pre;
            if (rel < 0.0) continue;
            const auto b = static_cast<long long>(std::floor(rel / window.bin_width));
            if (b < 0 || b >= bins) continue;
            const auto col = column.find(sorted[k].neuron_id);
            if (col == column.end()) continue;
            used[k] = 1;
            auto& c = counts[static_cast<std::size_t>(b) * ids.size() + static_cast<std::size_t>(col->second)];
            if (c < 65535) ++c;
        }
        for (int b = 0; b < bins; ++b) {
            for (std::size_t j = 0; j < ids.size(); ++j) {
                const auto c = counts[static_cast<std::size_t>(b) * ids.size() + j];
                if (c > 1) ++st.clipped_bins;
                trial(b, static_cast<int>(j)) = c > 0 ? 1 : 0;
            }
        }
        panel.trials.push_back(std::move(trial));
    }
    for (char u : used) st.events_in_windows += u;
    st.dropped_events = static_cast<long long>(sorted.size()) - st.events_in_windows;
    if (stats) *stats = st;
    return panel;
}

/// Drops all-zero trials, then keeps the l trials with the most spikes
/// (ties broken by original index), in original order. `kept` receives the
/// original indices of the kept trials.
inline SpikePanel filter_trials(const SpikePanel& panel, int l, std::vector<int>* kept = nullptr) {
    if (l < 1) throw std::invalid_argument("trial count l must be positive");
    std::vector<std::pair<long long, int>> active;
    for (int k = 0; k < panel.trial_count(); ++k) {
        const long long s = panel.trials[static_cast<std::size_t>(k)].total();
        if (s > 0) active.emplace_back(s, k);
    }
    if (static_cast<int>(active.size()) < l) {
        throw std::invalid_argument("need " + std::to_string(l) + " trials with spikes but only " +
                                    std::to_string(active.size()) + " are nonzero (shortfall " +
                                    std::to_string(l - static_cast<int>(active.size())) + ")");
    }
    std::stable_sort(active.begin(), active.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    active.resize(static_cast<std::size_t>(l));
    std::vector<int> idx;
    for (const auto& a : active) idx.push_back(a.second);
    std::sort(idx.begin(), idx.end());
    SpikePanel out;
    out.bin_width_ms = panel.bin_width_ms;
    out.neuron_ids = panel.neuron_ids;
    for (int k : idx) out.trials.push_back(panel.trials[static_cast<std::size_t>(k)]);
    if (kept) *kept = idx;
    return out;
}

struct NeuronFilterResult {
    SpikePanel panel;
    std::vector<std::string> excluded_ids;
};

/// Keeps neuron i iff total spikes / trial count >= min_mean_spikes.
inline NeuronFilterResult filter_neurons(const SpikePanel& panel, double min_mean_spikes = 10.0) {
    if (panel.trial_count() == 0 || panel.neuron_count() == 0) throw std::invalid_argument("cannot filter an empty panel");
    std::vector<int> keep;
    NeuronFilterResult res;
    for (int i = 0; i < panel.neuron_count(); ++i) {
        long long total = 0;
        for (const auto& tr : panel.trials) total += tr.column_total(i);
        const double mean = static_cast<double>(total) / static_cast<double>(panel.trial_count());
        if (mean >= min_mean_spikes) {
            keep.push_back(i);
        } else {
            res.excluded_ids.push_back(panel.neuron_ids[static_cast<std::size_t>(i)]);
        }
    }
    if (keep.empty()) throw std::invalid_argument("every neuron falls below the firing threshold");
    res.panel.bin_width_ms = panel.bin_width_ms;
    for (int i : keep) res.panel.neuron_ids.push_back(panel.neuron_ids[static_cast<std::size_t>(i)]);
    for (const auto& tr : panel.trials) {
        BinaryMatrix m(tr.rows(), static_cast<int>(keep.size()));
        for (int t = 0; t < tr.rows(); ++t)
            for (std::size_t c = 0; c < keep.size(); ++c) m(t, static_cast<int>(c)) = tr(t, keep[c]);
        res.panel.trials.push_back(std::move(m));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Panels

inline void write_panel_csv(const SpikePanel& panel, const std::string& path) {
    panel.validate();
    auto out = detail::open_out(path);
    out << "trial,t";
    for (const auto& id : panel.neuron_ids) out << ',' << id;
    out << '\n';
    std::string row;
    for (int k = 0; k < panel.trial_count(); ++k) {
        const auto& tr = panel.trials[static_cast<std::size_t>(k)];
        for (int t = 0; t < tr.rows(); ++t) {
            row = std::to_string(k + 1) + ',' + std::to_string(t + 1);
            const std::uint8_t* v = tr.row(t);
            for (int j = 0; j < tr.cols(); ++j) {
                row += ',';
                row += v[j] ? '1' : '0';
            }
            row += '\n';
            out << row;
        }
    }
}

/// Reads a panel written by write_panel_csv. bin_width_ms is not part of the
/// CSV and defaults to 1 (see read_panel_metadata).
inline SpikePanel read_panel_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line)) detail::fail(path, 1, "empty file");
    const auto header = detail::split_csv(line);
    detail::expect_header(header, {"trial", "t"}, path);
    if (header.size() < 3) detail::fail(path, 1, "panel needs at least one neuron column");
    SpikePanel panel;
    for (std::size_t k = 2; k < header.size(); ++k) panel.neuron_ids.push_back(detail::trim(header[k]));
    const int d = panel.neuron_count();

    std::vector<std::vector<std::uint8_t>> rows;
    int current_trial = 0;
    int expected_t = 1;
    int n_trial = -1;
    long long lineno = 1;
    auto close_trial = [&](long long at) {
        if (rows.empty()) return;
        const int n = static_cast<int>(rows.size());
        if (n_trial < 0) n_trial = n;
        if (n != n_trial) detail::fail(path, at, "trial " + std::to_string(current_trial) + " has " + std::to_string(n) +
                                                     " bins, expected " + std::to_string(n_trial));
        BinaryMatrix m(n, d);
        for (int t = 0; t < n; ++t)
            for (int j = 0; j < d; ++j) m(t, j) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
        panel.trials.push_back(std::move(m));
        rows.clear();
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split_csv(line);
        if (static_cast<int>(f.size()) != d + 2) {
            detail::fail(path, lineno, "expected " + std::to_string(d + 2) + " fields, got " + std::to_string(f.size()));
        }
        const auto trial = detail::parse_int(f[0], path, lineno);
        const auto t = detail::parse_int(f[1], path, lineno);
        if (trial != current_trial) {
            if (trial != current_trial + 1) detail::fail(path, lineno, "trials must be numbered 1, 2, ... in order");
            close_trial(lineno);
            current_trial = static_cast<int>(trial);
            expected_t = 1;
        }
        if (t != expected_t) detail::fail(path, lineno, "expected t = " + std::to_string(expected_t));
        ++expected_t;
        std::vector<std::uint8_t> vals(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) {
            const std::string v = detail::trim(f[static_cast<std::size_t>(j) + 2]);
            if (v == "0") vals[static_cast<std::size_t>(j)] = 0;
            else if (v == "1") vals[static_cast<std::size_t>(j)] = 1;
            else detail::fail(path, lineno, "panel entries must be 0 or 1, got '" + v + "'");
        }
        rows.push_back(std::move(vals));
    }
    close_trial(lineno);
    if (panel.trials.empty()) detail::fail(path, lineno, "panel has no rows");
    return panel;
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    auto out = detail::open_out(path);
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::string& path) {
    auto in = detail::open_in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Matrices

inline void write_matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& row_ids,
                             const std::vector<std::string>& col_labels, const std::string& path) {
    if (static_cast<Eigen::Index>(row_ids.size()) != m.rows() || static_cast<Eigen::Index>(col_labels.size()) != m.cols()) {
        throw std::invalid_argument("labels do not match matrix shape for " + path);
    }
    auto out = detail::open_out(path);
    out << "neuron";
    for (const auto& c : col_labels) out << ',' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << row_ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_real(m(i, j));
        out << '\n';
    }
}

inline void write_matrix_csv(const BoolMatrix& m, const std::vector<std::string>& row_ids,
                             const std::vector<std::string>& col_labels, const std::string& path) {
    if (static_cast<Eigen::Index>(row_ids.size()) != m.rows() || static_cast<Eigen::Index>(col_labels.size()) != m.cols()) {
        throw std::invalid_argument("labels do not match matrix shape for " + path);
    }
    auto out = detail::open_out(path);
    out << "neuron";
    for (const auto& c : col_labels) out << ',' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out << row_ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << (m(i, j) ? '1' : '0');
        out << '\n';
    }
}

struct LabeledMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> row_ids;
    std::vector<std::string> col_labels;
};

inline LabeledMatrix read_matrix_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line)) detail::fail(path, 1, "empty file");
    const auto header = detail::split_csv(line);
    detail::expect_header(header, {"neuron"}, path);
    LabeledMatrix lm;
    for (std::size_t k = 1; k < header.size(); ++k) lm.col_labels.push_back(detail::trim(header[k]));
    std::vector<std::vector<double>> rows;
    long long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != header.size()) {
            detail::fail(path, lineno, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
        }
        lm.row_ids.push_back(detail::trim(f[0]));
        std::vector<double> r;
        for (std::size_t k = 1; k < f.size(); ++k) r.push_back(detail::parse_real(f[k], path, lineno));
        rows.push_back(std::move(r));
    }
    lm.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(lm.col_labels.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) lm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return lm;
}

inline std::vector<std::string> numbered_labels(const std::string& prefix, Eigen::Index count) {
    std::vector<std::string> v;
    for (Eigen::Index k = 1; k <= count; ++k) v.push_back(prefix + std::to_string(k));
    return v;
}

// ---------------------------------------------------------------------------
// Graphviz

/// Directed graph of Gamma: entry (i, j) != 0 is drawn as an edge i -> j,
/// solid when positive, dashed when negative, grey when flagged insignificant.
/// Excluded neurons appear as white nodes without edges.
inline std::string to_dot(const InteractionMatrix& gamma, const BoolMatrix* significant,
                          const std::vector<std::string>& ids, const std::vector<std::string>& excluded_ids = {}) {
    if (gamma.rows() != gamma.cols() || static_cast<Eigen::Index>(ids.size()) != gamma.rows()) {
        throw std::invalid_argument("DOT export needs a square matrix with one id per row");
    }
    if (significant && (significant->rows() != gamma.rows() || significant->cols() != gamma.cols())) {
        throw std::invalid_argument("significance mask does not match interaction matrix");
    }
    std::ostringstream out;
    out << "digraph network {\n";
    out << "  node [shape=circle, style=filled, fillcolor=black, fontcolor=white];\n";
    for (const auto& id : ids) out << "  \"" << id << "\";\n";
    for (const auto& id : excluded_ids) out << "  \"" << id << "\" [fillcolor=white, fontcolor=black];\n";
    for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
        for (Eigen::Index j = 0; j < gamma.cols(); ++j) {
            const double g = gamma(i, j);
            if (i == j || g == 0.0) continue;
            const bool grey = significant && !(*significant)(i, j);
            out << "  \"" << ids[static_cast<std::size_t>(i)] << "\" -> \"" << ids[static_cast<std::size_t>(j)] << "\" [style="
                << (g > 0.0 ? "solid" : "dashed") << ", color=" << (grey ? "grey" : "black") << ", label=\""
                << format_real(g) << "\"];\n";
        }
    }
    out << "}\n";
    return out.str();
}

inline void export_dot(const InteractionMatrix& gamma, const BoolMatrix* significant, const std::vector<std::string>& ids,
                       const std::vector<std::string>& excluded_ids, const std::string& path) {
    auto out = detail::open_out(path);
    out << to_dot(gamma, significant, ids, excluded_ids);
}

} // namespace bapla
