#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "caro/common.hpp"

namespace caro {

// Probability floor applied before any log; removes the P=0 and P=1
// singularities of the misconfidence score while preserving ordering.
inline constexpr double kProbEpsilon = 1e-6;

// ─── Score scale ─────────────────────────────────────────────────────

// Ordinal grading scale with classes 0..K-1.
struct ScoreScale {
    int num_classes = 2;

    explicit ScoreScale(int k = 2) : num_classes(k) {
        if (k < 2) throw Error(Errc::invalid_input, "score scale requires at least 2 classes");
    }

    bool valid_label(int label) const { return label >= 0 && label < num_classes; }

    std::vector<int> labels() const {
        std::vector<int> out(static_cast<std::size_t>(num_classes));
        for (int i = 0; i < num_classes; ++i) out[static_cast<std::size_t>(i)] = i;
        return out;
    }
};

// ─── Class distribution ──────────────────────────────────────────────

struct ClassDistribution {
    std::vector<double> probs;

    ClassDistribution() = default;
    explicit ClassDistribution(std::vector<double> p) : probs(std::move(p)) {}

    static ClassDistribution uniform(int k) {
        return ClassDistribution(std::vector<double>(static_cast<std::size_t>(k), 1.0 / k));
    }

    // Probability 'peak' at the given class, remainder spread evenly.
    static ClassDistribution peaked(int k, int at, double peak) {
        std::vector<double> p(static_cast<std::size_t>(k), k > 1 ? (1.0 - peak) / (k - 1) : 0.0);
        p[static_cast<std::size_t>(at)] = peak;
        return ClassDistribution(std::move(p));
    }

    static ClassDistribution one_hot(int k, int at) { return peaked(k, at, 1.0 - kProbEpsilon); }

    int size() const { return static_cast<int>(probs.size()); }

    // Clamp negatives to zero and rescale to sum 1. Degenerate inputs
    // (all zero) fall back to uniform.
    void renormalize() {
        double sum = 0.0;
        for (double& p : probs) {
            if (p < 0.0 || !std::isfinite(p)) p = 0.0;
            sum += p;
        }
        if (sum <= 0.0) {
            *this = uniform(size());
            return;
        }
        for (double& p : probs) p /= sum;
    }

    bool sums_to_one(double tol = 1e-9) const {
        double sum = 0.0;
        for (double p : probs) sum += p;
        return std::fabs(sum - 1.0) <= tol;
    }

    // Lowest index wins ties, so predictions are deterministic.
    int argmax() const {
        int best = 0;
        for (int i = 1; i < size(); ++i) {
            if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
        }
        return best;
    }

    double clamped(int cls) const {
        double p = probs[static_cast<std::size_t>(cls)];
        return std::min(std::max(p, kProbEpsilon), 1.0 - kProbEpsilon);
    }
};

// ─── Graded response ─────────────────────────────────────────────────

struct GradedResponse {
    std::string response_id;
    std::string response_text;      // carried along for prompt assembly
    std::optional<int> true_label;  // absent at pure inference
    int predicted_label = 0;
    ClassDistribution distribution;
    std::string reasoning;
    double misconfidence = 0.0;

    bool correct() const { return true_label && *true_label == predicted_label; }
};

struct MetricReport {
    double accuracy = 0.0;
    double kappa = 0.0;
    int n = 0;
};

// One dataset record before grading; label is absent for
// inference-only sets.
struct ResponseItem {
    std::string id;
    std::string text;
    std::optional<int> label;
};

// ─── Confusion matrix ────────────────────────────────────────────────

// Rows are true labels, columns are predictions.
struct ConfusionMatrix {
    ScoreScale scale;
    std::vector<std::vector<long>> counts;

    explicit ConfusionMatrix(ScoreScale s = ScoreScale(2))
        : scale(s),
          counts(static_cast<std::size_t>(s.num_classes),
                 std::vector<long>(static_cast<std::size_t>(s.num_classes), 0)) {}

    static ConfusionMatrix from_counts(std::vector<std::vector<long>> rows) {
        ConfusionMatrix m(ScoreScale(static_cast<int>(rows.size())));
        for (const auto& r : rows) {
            if (r.size() != rows.size())
                throw Error(Errc::invalid_input, "confusion matrix must be square");
        }
        m.counts = std::move(rows);
        return m;
    }

    int k() const { return scale.num_classes; }

    long& at(int true_label, int predicted) {
        return counts[static_cast<std::size_t>(true_label)][static_cast<std::size_t>(predicted)];
    }
    long at(int true_label, int predicted) const {
        return counts[static_cast<std::size_t>(true_label)][static_cast<std::size_t>(predicted)];
    }

    long total() const {
        long n = 0;
        for (const auto& row : counts)
            for (long c : row) n += c;
        return n;
    }

    long diagonal() const {
        long d = 0;
        for (int i = 0; i < k(); ++i) d += at(i, i);
        return d;
    }

    long off_diagonal() const { return total() - diagonal(); }

    std::vector<long> row_sums() const {
        std::vector<long> out(static_cast<std::size_t>(k()), 0);
        for (int i = 0; i < k(); ++i)
            for (int j = 0; j < k(); ++j) out[static_cast<std::size_t>(i)] += at(i, j);
        return out;
    }

    std::vector<long> col_sums() const {
        std::vector<long> out(static_cast<std::size_t>(k()), 0);
        for (int i = 0; i < k(); ++i)
            for (int j = 0; j < k(); ++j) out[static_cast<std::size_t>(j)] += at(i, j);
        return out;
    }

    ConfusionMatrix& add(const ConfusionMatrix& other) {
        for (int i = 0; i < k(); ++i)
            for (int j = 0; j < k(); ++j) at(i, j) += other.at(i, j);
        return *this;
    }
};

// ─── Metrics ─────────────────────────────────────────────────────────

inline double accuracy(const ConfusionMatrix& matrix) {
    long n = matrix.total();
    if (n == 0) throw Error(Errc::invalid_input, "accuracy of an empty confusion matrix");
    return static_cast<double>(matrix.diagonal()) / static_cast<double>(n);
}

// Cohen's kappa. When all marginal mass sits in one (true, pred) pair
// chance agreement is 1 and the statistic is undefined; we return 0
// ("no better than chance").
inline double cohen_kappa(const ConfusionMatrix& matrix) {
    long n = matrix.total();
    if (n == 0) throw Error(Errc::invalid_input, "kappa of an empty confusion matrix");
    double dn = static_cast<double>(n);
    double po = static_cast<double>(matrix.diagonal()) / dn;
    auto rows = matrix.row_sums();
    auto cols = matrix.col_sums();
    double pe = 0.0;
    for (int i = 0; i < matrix.k(); ++i) {
        pe += (static_cast<double>(rows[static_cast<std::size_t>(i)]) / dn) *
              (static_cast<double>(cols[static_cast<std::size_t>(i)]) / dn);
    }
    if (pe >= 1.0) return 0.0;
    return (po - pe) / (1.0 - pe);
}

inline MetricReport metric_report(const ConfusionMatrix& matrix) {
    return MetricReport{accuracy(matrix), cohen_kappa(matrix), static_cast<int>(matrix.total())};
}

// Uncertainty score: low-confidence correct predictions and
// confidently-wrong predictions both rank high. Probabilities are
// clamped to [1e-6, 1-1e-6] before the logs.
inline double misconfidence(const ClassDistribution& dist, int predicted, int true_label) {
    if (predicted < 0 || predicted >= dist.size() || true_label < 0 || true_label >= dist.size())
        throw Error(Errc::invalid_input, "misconfidence: class index out of range");
    double p_pred = dist.clamped(predicted);
    if (predicted == true_label) return -std::log(p_pred);
    double p_true = dist.clamped(true_label);
    return std::fabs(std::log(p_pred) / std::log(p_true));
}

// Maps to [0,1]; a degenerate range maps everything to 0.5 so downstream
// score comparisons still discriminate on the diversity bonus.
inline std::vector<double> min_max_normalize(const std::vector<double>& values) {
    if (values.empty()) throw Error(Errc::invalid_input, "min_max_normalize on empty list");
    double lo = *std::min_element(values.begin(), values.end());
    double hi = *std::max_element(values.begin(), values.end());
    std::vector<double> out(values.size());
    if (hi - lo <= 0.0) {
        std::fill(out.begin(), out.end(), 0.5);
        return out;
    }
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / (hi - lo);
    return out;
}

}  // namespace caro
