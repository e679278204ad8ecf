#pragma once

// Trial-structured multivariate binary time series.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapla {

/// d x d matrix of directed edge weights. Row i holds the lag coefficients
/// of neuron i, so entry (i, j) is the influence of neuron j on neuron i.
using InteractionMatrix = Eigen::MatrixXd;

/// Row-major n x d matrix of 0/1 states for one trial.
class BinaryMatrix {
public:
    BinaryMatrix() = default;
    BinaryMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("negative matrix dimension");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }

    std::uint8_t operator()(int r, int c) const { return data_[index(r, c)]; }
    std::uint8_t& operator()(int r, int c) { return data_[index(r, c)]; }

    const std::uint8_t* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    long long total() const {
        long long s = 0;
        for (auto v : data_) s += v;
        return s;
    }

    long long column_total(int c) const {
        long long s = 0;
        for (int r = 0; r < rows_; ++r) s += (*this)(r, c);
        return s;
    }

    friend bool operator==(const BinaryMatrix&, const BinaryMatrix&) = default;

private:
    std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * cols_ + c; }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<std::uint8_t> data_;
};

struct SpikePanel {
    std::vector<BinaryMatrix> trials;
    double bin_width_ms = 1.0;
    std::vector<std::string> neuron_ids;

    int trial_count() const { return static_cast<int>(trials.size()); }
    int neuron_count() const { return static_cast<int>(neuron_ids.size()); }
    int bins_per_trial() const { return trials.empty() ? 0 : trials.front().rows(); }

    /// Lag-valid observations: every bin except the first of each trial.
    long long effective_length() const {
        long long n = 0;
        for (const auto& tr : trials) n += tr.rows() > 0 ? tr.rows() - 1 : 0;
        return n;
    }

    /// Throws std::invalid_argument unless every trial is n_trial x d.
    void validate() const {
        const int d = neuron_count();
        const int n = bins_per_trial();
        for (std::size_t k = 0; k < trials.size(); ++k) {
            if (trials[k].cols() != d || trials[k].rows() != n) {
                throw std::invalid_argument("trial " + std::to_string(k) + " has shape " +
                                            std::to_string(trials[k].rows()) + "x" +
                                            std::to_string(trials[k].cols()) + ", expected " +
                                            std::to_string(n) + "x" + std::to_string(d));
            }
        }
    }

    friend bool operator==(const SpikePanel&, const SpikePanel&) = default;
};

inline std::vector<std::string> default_neuron_ids(int d) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(d));
    for (int i = 1; i <= d; ++i) ids.push_back("neuron_" + std::to_string(i));
    return ids;
}

} // namespace bapla
