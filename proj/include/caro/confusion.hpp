#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "caro/metrics.hpp"

namespace caro {

// ─── Error modes ─────────────────────────────────────────────────────

// One off-diagonal confusion cell: true class i predicted as j.
struct ErrorMode {
    int true_class = 0;
    int predicted_class = 0;
    long count = 0;
    double share = 0.0;  // count / total off-diagonal errors

    std::string label() const {
        return std::to_string(true_class) + " -> " + std::to_string(predicted_class);
    }
};

// Mode identity used to tag rule patches and candidates. Besides plain
// confusion cells there are two synthetic kinds: the consolidated
// ruleset and the aggregate-feedback baseline patch.
struct ModeKey {
    enum class Kind { cell, consolidated, aggregate };

    Kind kind = Kind::cell;
    int true_class = 0;
    int predicted_class = 0;

    static ModeKey cell(int i, int j) { return ModeKey{Kind::cell, i, j}; }
    static ModeKey cell(const ErrorMode& m) { return cell(m.true_class, m.predicted_class); }
    static ModeKey consolidated() { return ModeKey{Kind::consolidated, -1, -1}; }
    static ModeKey aggregate() { return ModeKey{Kind::aggregate, -1, -1}; }

    bool is_cell() const { return kind == Kind::cell; }

    std::string label() const {
        switch (kind) {
            case Kind::consolidated: return "CONSOLIDATED";
            case Kind::aggregate: return "AGGREGATE";
            case Kind::cell: break;
        }
        return std::to_string(true_class) + " -> " + std::to_string(predicted_class);
    }

    friend bool operator==(const ModeKey& a, const ModeKey& b) {
        return a.kind == b.kind && a.true_class == b.true_class &&
               a.predicted_class == b.predicted_class;
    }
    friend bool operator<(const ModeKey& a, const ModeKey& b) {
        if (a.kind != b.kind) return a.kind < b.kind;
        if (a.true_class != b.true_class) return a.true_class < b.true_class;
        return a.predicted_class < b.predicted_class;
    }
};

// ─── Matrix construction and mode ranking ────────────────────────────

inline ConfusionMatrix build_confusion(const std::vector<GradedResponse>& graded,
                                       const ScoreScale& scale) {
    ConfusionMatrix matrix(scale);
    for (const auto& g : graded) {
        if (!g.true_label)
            throw Error(Errc::invalid_input, "response " + g.response_id + " has no true label");
        if (!scale.valid_label(*g.true_label) || !scale.valid_label(g.predicted_label))
            throw Error(Errc::invalid_input,
                        "response " + g.response_id + " has a label outside the score scale");
        ++matrix.at(*g.true_label, g.predicted_label);
    }
    return matrix;
}

// Off-diagonal cells with at least one error, by count descending; equal
// counts break by (true asc, pred asc) so runs are reproducible.
inline std::vector<ErrorMode> top_k_modes(const ConfusionMatrix& matrix, int k) {
    if (k < 1) throw Error(Errc::invalid_input, "top_k_modes requires k >= 1");
    long total_errors = matrix.off_diagonal();
    std::vector<ErrorMode> modes;
    for (int i = 0; i < matrix.k(); ++i) {
        for (int j = 0; j < matrix.k(); ++j) {
            if (i == j) continue;
            long c = matrix.at(i, j);
            if (c < 1) continue;
            modes.push_back(ErrorMode{i, j, c, static_cast<double>(c) / static_cast<double>(total_errors)});
        }
    }
    std::sort(modes.begin(), modes.end(), [](const ErrorMode& a, const ErrorMode& b) {
        if (a.count != b.count) return a.count > b.count;
        if (a.true_class != b.true_class) return a.true_class < b.true_class;
        return a.predicted_class < b.predicted_class;
    });
    if (static_cast<int>(modes.size()) > k) modes.resize(static_cast<std::size_t>(k));
    return modes;
}

// Misconfidence descending; equal scores fall back to response_id order
// so rankings stay stable (matters for the one-hot probability mode,
// where every correct prediction shares the same score).
inline void sort_by_misconfidence(std::vector<GradedResponse>& items) {
    std::sort(items.begin(), items.end(), [](const GradedResponse& a, const GradedResponse& b) {
        if (a.misconfidence != b.misconfidence) return a.misconfidence > b.misconfidence;
        return a.response_id < b.response_id;
    });
}

inline std::vector<GradedResponse> extract_error_set(const std::vector<GradedResponse>& graded,
                                                     const ErrorMode& mode, int cap) {
    if (cap < 1) throw Error(Errc::invalid_input, "extract_error_set requires cap >= 1");
    std::vector<GradedResponse> out;
    for (const auto& g : graded) {
        if (g.true_label && *g.true_label == mode.true_class &&
            g.predicted_label == mode.predicted_class)
            out.push_back(g);
    }
    sort_by_misconfidence(out);
    if (static_cast<int>(out.size()) > cap) out.resize(static_cast<std::size_t>(cap));
    return out;
}

inline std::vector<GradedResponse> contrastive_correct(const std::vector<GradedResponse>& graded,
                                                       int class_label, int n) {
    if (n < 1) throw Error(Errc::invalid_input, "contrastive_correct requires n >= 1");
    std::vector<GradedResponse> out;
    for (const auto& g : graded) {
        if (g.correct() && g.predicted_label == class_label) out.push_back(g);
    }
    sort_by_misconfidence(out);
    if (static_cast<int>(out.size()) > n) out.resize(static_cast<std::size_t>(n));
    return out;
}

// ─── Rendering ───────────────────────────────────────────────────────
//
// The plain-text matrix rendering is part of the Reflector prompt
// contract and is pinned by golden-file tests; change it deliberately.

inline std::string render_matrix(const ConfusionMatrix& matrix) {
    std::string out = "True\\Pred |";
    for (int j = 0; j < matrix.k(); ++j) out += " " + std::to_string(j);
    out += "\n";
    for (int i = 0; i < matrix.k(); ++i) {
        out += std::to_string(i) + " |";
        for (int j = 0; j < matrix.k(); ++j) out += " " + std::to_string(matrix.at(i, j));
        out += "\n";
    }
    return out;
}

// "i -> j: N errors (P%)" lines for every nonzero mode, count
// descending, optionally marking one cell as the current focus.
inline std::string render_error_distribution(const ConfusionMatrix& matrix,
                                             const ErrorMode* focus = nullptr) {
    auto modes = top_k_modes(matrix, matrix.k() * matrix.k());
    std::string out = "Error Distribution:\n";
    if (modes.empty()) out += "- (no errors)\n";
    for (const auto& m : modes) {
        out += "- " + m.label() + ": " + std::to_string(m.count) + " errors (" +
               format_double(m.share * 100.0, 1) + "%)";
        if (focus && focus->true_class == m.true_class &&
            focus->predicted_class == m.predicted_class)
            out += " <- CURRENT FOCUS";
        out += "\n";
    }
    return out;
}

inline std::string render_global_summary(const ConfusionMatrix& matrix,
                                         const ErrorMode* focus = nullptr) {
    return render_matrix(matrix) + "\n" + render_error_distribution(matrix, focus);
}

// ─── Mode context ────────────────────────────────────────────────────

// Everything the Reflector needs about one confusion cell: the errors
// themselves, boundary-hugging correct examples for both classes, and
// the global performance picture.
struct ModeContext {
    ErrorMode mode;
    std::vector<GradedResponse> error_examples;
    std::vector<GradedResponse> contrastive_true;  // correct examples of class i
    std::vector<GradedResponse> contrastive_pred;  // correct examples of class j
    std::string global_summary;
};

inline ModeContext assemble_mode_context(const std::vector<GradedResponse>& graded,
                                         const ConfusionMatrix& matrix, const ErrorMode& mode,
                                         int error_cap = 8, int contrastive_n = 2) {
    ModeContext ctx;
    ctx.mode = mode;
    ctx.error_examples = extract_error_set(graded, mode, error_cap);
    ctx.contrastive_true = contrastive_correct(graded, mode.true_class, contrastive_n);
    ctx.contrastive_pred = contrastive_correct(graded, mode.predicted_class, contrastive_n);
    ctx.global_summary = render_global_summary(matrix, &mode);
    return ctx;
}

}  // namespace caro
