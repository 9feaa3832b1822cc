#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "caro/embedding.hpp"
#include "caro/grader.hpp"
#include "caro/reflection.hpp"
#include "caro/rubric.hpp"

namespace caro {

// ─── Candidate pool ──────────────────────────────────────────────────

struct CandidateStats {
    double mean_kappa = 0.0;
    int eval_count = 0;       // chunks evaluated
    double ucb = 0.0;         // last computed UCB value
    double normalized = 0.0;  // min-max normalized mean kappa
};

struct CandidatePool {
    std::vector<RubricCandidate> candidates;
    std::vector<CandidateStats> stats;
    int round = 0;
};

// ─── Candidate expansion ─────────────────────────────────────────────

namespace detail {

// Splits a rules section into the base text and the appended per-mode
// fix subsections (in application order).
struct RulesLayout {
    std::string base;
    std::vector<std::string> subsections;
};

inline RulesLayout split_rules_section(const std::string& rules) {
    RulesLayout layout;
    static const std::string header = "## Fixes for mode ";
    std::size_t first = rules.find(header);
    layout.base = trim(first == std::string::npos ? rules : rules.substr(0, first));
    while (first != std::string::npos) {
        std::size_t next = rules.find(header, first + header.size());
        std::string chunk = next == std::string::npos ? rules.substr(first)
                                                      : rules.substr(first, next - first);
        layout.subsections.push_back(trim(chunk));
        first = next;
    }
    return layout;
}

inline std::string join_rules_layout(const RulesLayout& layout) {
    std::string out = layout.base;
    for (const auto& s : layout.subsections) {
        if (!out.empty()) out += "\n\n";
        out += s;
    }
    return out;
}

// Oldest fix subsections are dropped first when the section outgrows the
// word cap; the base rubric rules are never dropped.
inline std::string enforce_rules_cap(const std::string& rules, int word_cap) {
    if (word_cap <= 0 || static_cast<int>(word_count(rules)) <= word_cap) return rules;
    RulesLayout layout = split_rules_section(rules);
    while (!layout.subsections.empty() &&
           static_cast<int>(word_count(join_rules_layout(layout))) > word_cap) {
        layout.subsections.erase(layout.subsections.begin());
        log_warn("rules section exceeded the word cap; dropped the oldest fix subsection");
    }
    return join_rules_layout(layout);
}

}  // namespace detail

// P ⊕ r: per-mode patches append a mode-labeled subsection so earlier
// surgical repairs survive; a consolidated patch replaces the whole
// rules section with its priority-weighted rewrite.
inline RubricCandidate apply_patch(const RubricCandidate& parent, const RulePatch& patch,
                                   const std::string& child_id, int rules_word_cap = 0) {
    RubricCandidate child;
    child.id = child_id;
    child.parent_id = parent.id;
    child.patch_id = patch.id;
    child.target_mode = patch.mode;
    child.prompt_text = parent.prompt_text;
    std::string rules = parent.rules_section();
    if (patch.mode.kind == ModeKey::Kind::consolidated) {
        rules = trim(render_consolidated_rules(patch));
    } else {
        rules += (rules.empty() ? "" : "\n\n") + trim(render_patch_subsection(patch));
    }
    child.set_rules_section(detail::enforce_rules_cap(rules, rules_word_cap));
    return child;
}

inline CandidatePool expand_candidates(const std::vector<RubricCandidate>& beam,
                                       const std::vector<RulePatch>& patches, int round,
                                       int rules_word_cap = 0) {
    if (beam.empty() || patches.empty())
        throw Error(Errc::invalid_input, "expand_candidates needs a beam and patches");
    CandidatePool pool;
    pool.round = round;
    int index = 0;
    for (const auto& parent : beam) {
        for (const auto& patch : patches) {
            std::string child_id = "r" + std::to_string(round) + "c" + std::to_string(index++);
            pool.candidates.push_back(apply_patch(parent, patch, child_id, rules_word_cap));
        }
    }
    pool.stats.assign(pool.candidates.size(), CandidateStats{});
    return pool;
}

// ─── UCB-based evaluation ────────────────────────────────────────────

using ChunkEvaluator =
    std::function<double(const RubricCandidate&, const std::vector<ResponseItem>&)>;

// Splits the eval batch into fixed-size chunks and allocates them as a
// bandit: one bootstrap chunk per candidate, then each remaining chunk
// goes to the candidate with the highest UCB (mean kappa + exploration
// term). A candidate's n-th evaluation cycles through the chunks, so
// everyone is compared on the same slices first.
inline void ucb_evaluate(CandidatePool& pool, const std::vector<ResponseItem>& eval_batch,
                         int budget_chunks, int chunk_size, double exploration_c,
                         const ChunkEvaluator& evaluate_chunk) {
    if (eval_batch.empty()) throw Error(Errc::invalid_input, "ucb_evaluate on empty batch");
    if (chunk_size < 1) throw Error(Errc::config, "chunk size must be >= 1");
    const int n = static_cast<int>(pool.candidates.size());
    if (budget_chunks < n)
        throw Error(Errc::config, "UCB budget of " + std::to_string(budget_chunks) +
                                      " chunks cannot bootstrap " + std::to_string(n) +
                                      " candidates");

    std::vector<std::vector<ResponseItem>> chunks;
    for (std::size_t at = 0; at < eval_batch.size(); at += static_cast<std::size_t>(chunk_size)) {
        auto end = std::min(eval_batch.size(), at + static_cast<std::size_t>(chunk_size));
        chunks.emplace_back(eval_batch.begin() + static_cast<long>(at),
                            eval_batch.begin() + static_cast<long>(end));
    }

    std::vector<double> kappa_sum(static_cast<std::size_t>(n), 0.0);
    pool.stats.assign(static_cast<std::size_t>(n), CandidateStats{});

    auto evaluate_next = [&](int ci) {
        auto& stat = pool.stats[static_cast<std::size_t>(ci)];
        const auto& chunk = chunks[static_cast<std::size_t>(stat.eval_count) % chunks.size()];
        kappa_sum[static_cast<std::size_t>(ci)] +=
            evaluate_chunk(pool.candidates[static_cast<std::size_t>(ci)], chunk);
        stat.eval_count += 1;
        stat.mean_kappa = kappa_sum[static_cast<std::size_t>(ci)] / stat.eval_count;
    };

    int spent = 0;
    for (int ci = 0; ci < n && spent < budget_chunks; ++ci, ++spent) evaluate_next(ci);

    while (spent < budget_chunks) {
        double total = static_cast<double>(spent);
        int best = 0;
        double best_ucb = -1e300;
        for (int ci = 0; ci < n; ++ci) {
            auto& stat = pool.stats[static_cast<std::size_t>(ci)];
            stat.ucb = stat.mean_kappa +
                       exploration_c * std::sqrt(2.0 * std::log(total) / stat.eval_count);
            if (stat.ucb > best_ucb) {
                best_ucb = stat.ucb;
                best = ci;
            }
        }
        evaluate_next(best);
        ++spent;
    }

    std::vector<double> means(static_cast<std::size_t>(n));
    for (int ci = 0; ci < n; ++ci)
        means[static_cast<std::size_t>(ci)] = pool.stats[static_cast<std::size_t>(ci)].mean_kappa;
    auto normalized = min_max_normalize(means);
    for (int ci = 0; ci < n; ++ci)
        pool.stats[static_cast<std::size_t>(ci)].normalized = normalized[static_cast<std::size_t>(ci)];
}

// ─── Diversity-aware beam selection ──────────────────────────────────

// Greedy selection maximizing normalized kappa plus a bonus for
// candidates whose target mode is not yet covered by this round's
// picks. Aggregate-baseline candidates never receive the bonus.
inline std::vector<RubricCandidate> diverse_select(const CandidatePool& pool, int beam_size,
                                                   double diversity_weight) {
    if (beam_size < 1) throw Error(Errc::invalid_input, "beam size must be >= 1");
    const int n = static_cast<int>(pool.candidates.size());
    if (n < beam_size)
        log_info("pool smaller than beam (" + std::to_string(n) + " < " +
                 std::to_string(beam_size) + "); keeping the whole pool");
    const int picks = std::min(beam_size, n);

    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    std::set<ModeKey> covered;
    std::vector<RubricCandidate> selected;
    selected.reserve(static_cast<std::size_t>(picks));

    for (int pick = 0; pick < picks; ++pick) {
        int best = -1;
        double best_score = 0.0;
        for (int ci = 0; ci < n; ++ci) {
            if (taken[static_cast<std::size_t>(ci)]) continue;
            const auto& cand = pool.candidates[static_cast<std::size_t>(ci)];
            const auto& stat = pool.stats[static_cast<std::size_t>(ci)];
            bool bonus = cand.target_mode && cand.target_mode->kind != ModeKey::Kind::aggregate &&
                         covered.find(*cand.target_mode) == covered.end();
            double score = stat.normalized + (bonus ? diversity_weight : 0.0);
            if (best < 0) {
                best = ci;
                best_score = score;
                continue;
            }
            const auto& bstat = pool.stats[static_cast<std::size_t>(best)];
            const auto& bcand = pool.candidates[static_cast<std::size_t>(best)];
            if (score > best_score ||
                (score == best_score && (stat.mean_kappa > bstat.mean_kappa ||
                                         (stat.mean_kappa == bstat.mean_kappa &&
                                          cand.id < bcand.id)))) {
                best = ci;
                best_score = score;
            }
        }
        taken[static_cast<std::size_t>(best)] = true;
        const auto& cand = pool.candidates[static_cast<std::size_t>(best)];
        if (cand.target_mode) covered.insert(*cand.target_mode);
        selected.push_back(cand);
    }
    return selected;
}

// ─── Semantic minibatch sampling ─────────────────────────────────────

// Round 1 draws a seeded uniform sample. Later rounds anchor on the
// previous round's most misconfident responses, pull each anchor's k
// nearest training neighbors by cosine similarity, then pad back up to
// the cap with seeded uniform draws.
inline std::vector<ResponseItem> sample_minibatch(const std::vector<GradedResponse>& prev_misconf,
                                                  const std::vector<ResponseItem>& train_set,
                                                  int k, int batch_cap, int num_anchors,
                                                  std::uint64_t seed, int round,
                                                  EmbeddingProvider& embedder) {
    if (train_set.empty()) throw Error(Errc::invalid_input, "sample_minibatch on empty train set");
    if (batch_cap < 1) throw Error(Errc::invalid_input, "batch cap must be >= 1");

    std::vector<ResponseItem> ordered = train_set;
    std::sort(ordered.begin(), ordered.end(),
              [](const ResponseItem& a, const ResponseItem& b) { return a.id < b.id; });

    Rng rng(Rng::derive_seed(seed, "minibatch", static_cast<std::uint64_t>(round)));

    std::vector<ResponseItem> picked;
    std::set<std::string> picked_ids;
    auto take = [&](const ResponseItem& item) {
        if (static_cast<int>(picked.size()) >= batch_cap) return;
        if (picked_ids.insert(item.id).second) picked.push_back(item);
    };

    if (!prev_misconf.empty()) {
        std::vector<GradedResponse> anchors = prev_misconf;
        sort_by_misconfidence(anchors);
        if (static_cast<int>(anchors.size()) > num_anchors)
            anchors.resize(static_cast<std::size_t>(num_anchors));

        std::vector<EmbeddingVector> train_vecs;
        train_vecs.reserve(ordered.size());
        for (const auto& item : ordered) train_vecs.push_back(embedder.embed(item.text, item.id));

        for (const auto& anchor : anchors) {
            EmbeddingVector av = embedder.embed(anchor.response_text, anchor.response_id);
            std::vector<std::pair<double, std::size_t>> ranked;
            ranked.reserve(ordered.size());
            for (std::size_t t = 0; t < ordered.size(); ++t)
                ranked.emplace_back(cosine_similarity(av, train_vecs[t]), t);
            std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return ordered[a.second].id < ordered[b.second].id;
            });
            int kept = 0;
            for (const auto& [sim, t] : ranked) {
                if (kept >= k) break;
                take(ordered[t]);
                ++kept;
            }
        }
    }

    // Seeded uniform padding (also the whole sample in round 1).
    auto fill_order = rng.sample_indices(ordered.size(), ordered.size());
    for (std::size_t idx : fill_order) {
        if (static_cast<int>(picked.size()) >= batch_cap) break;
        take(ordered[idx]);
    }
    // Deterministic shuffle so downstream evaluation chunks mix classes
    // instead of clustering around one anchor's neighborhood.
    rng.shuffle(picked);
    return picked;
}

}  // namespace caro
