#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "caro/config.hpp"
#include "caro/confusion.hpp"
#include "caro/dataset.hpp"
#include "caro/embedding.hpp"
#include "caro/gateway.hpp"
#include "caro/grader.hpp"
#include "caro/reflection.hpp"
#include "caro/rubric.hpp"
#include "caro/search.hpp"

namespace caro {

// ─── Run records ─────────────────────────────────────────────────────

struct BeamMemberRecord {
    std::string candidate_id;
    MetricReport report;
    std::vector<std::vector<long>> matrix_counts;
};

struct PoolCandidateRecord {
    std::string id;
    std::string parent_id;
    std::string patch_id;
    std::string mode_label;
    double mean_kappa = 0.0;
    int chunks = 0;
    double normalized = 0.0;
};

struct RoundRecord {
    int round = 0;
    std::vector<std::string> minibatch_ids;
    std::vector<BeamMemberRecord> evaluations;  // incoming beam, this round's minibatch
    std::string best_candidate_id;
    std::vector<ErrorMode> modes;
    std::vector<ModeDiagnosis> diagnoses;
    std::vector<RulePatch> patches;
    std::optional<RulePatch> consolidated;
    std::vector<PoolCandidateRecord> pool;
    std::vector<std::string> selected_ids;
    LedgerSlice usage;
};

struct OptimizationResult {
    RubricCandidate best;
    std::vector<RubricCandidate> final_beam;
    std::vector<RoundRecord> rounds;
    MetricReport val_report;
    std::vector<std::vector<long>> val_matrix_counts;
    std::optional<MetricReport> test_report;
    std::vector<GradedResponse> test_items;
    int test_parse_failures = 0;
    RunLedger ledger;
};

// ─── JSON serialization ──────────────────────────────────────────────

namespace records {

inline nlohmann::json mode_key_to_json(const ModeKey& m) {
    return nlohmann::json{{"kind", m.kind == ModeKey::Kind::cell ? "cell"
                                   : m.kind == ModeKey::Kind::consolidated ? "consolidated"
                                                                           : "aggregate"},
                          {"true_class", m.true_class},
                          {"predicted_class", m.predicted_class}};
}

inline ModeKey mode_key_from_json(const nlohmann::json& j) {
    std::string kind = j.value("kind", "cell");
    if (kind == "consolidated") return ModeKey::consolidated();
    if (kind == "aggregate") return ModeKey::aggregate();
    return ModeKey::cell(j.value("true_class", 0), j.value("predicted_class", 0));
}

inline nlohmann::json report_to_json(const MetricReport& r) {
    return nlohmann::json{{"accuracy", r.accuracy}, {"kappa", r.kappa}, {"n", r.n}};
}

inline MetricReport report_from_json(const nlohmann::json& j) {
    return MetricReport{j.value("accuracy", 0.0), j.value("kappa", 0.0), j.value("n", 0)};
}

inline nlohmann::json patch_to_json(const RulePatch& p) {
    return nlohmann::json{{"id", p.id},
                          {"mode", mode_key_to_json(p.mode)},
                          {"rules", p.rules},
                          {"rule_priorities", p.rule_priorities},
                          {"priority", p.priority},
                          {"tie_breakers", p.tie_breakers},
                          {"budget", budget_name(p.budget)}};
}

inline RulePatch patch_from_json(const nlohmann::json& j) {
    RulePatch p;
    p.id = j.value("id", "");
    p.mode = mode_key_from_json(j.at("mode"));
    p.rules = j.value("rules", std::vector<std::string>{});
    p.rule_priorities = j.value("rule_priorities", std::vector<int>{});
    p.priority = j.value("priority", 1);
    p.tie_breakers = j.value("tie_breakers", std::vector<std::string>{});
    p.budget = parse_budget(j.value("budget", "medium"));
    return p;
}

inline nlohmann::json diagnosis_to_json(const ModeDiagnosis& d) {
    return nlohmann::json{{"mode", mode_key_to_json(d.mode)},
                          {"root_cause", d.root_cause},
                          {"misleading_patterns", d.misleading_patterns},
                          {"boundary_rationale", d.boundary_rationale},
                          {"proposed_fixes", d.proposed_fixes},
                          {"safety_check", d.safety_check}};
}

inline ModeDiagnosis diagnosis_from_json(const nlohmann::json& j) {
    ModeDiagnosis d;
    d.mode = mode_key_from_json(j.at("mode"));
    d.root_cause = j.value("root_cause", "");
    d.misleading_patterns = j.value("misleading_patterns", std::vector<std::string>{});
    d.boundary_rationale = j.value("boundary_rationale", "");
    d.proposed_fixes = j.value("proposed_fixes", std::vector<std::string>{});
    d.safety_check = j.value("safety_check", "");
    return d;
}

inline nlohmann::json usage_to_json(const LedgerSlice& s) {
    return nlohmann::json{{"grade", s.calls(Tag::grade)},
                          {"reflect", s.calls(Tag::reflect)},
                          {"refine", s.calls(Tag::refine)},
                          {"consolidate", s.calls(Tag::consolidate)},
                          {"input_tokens", s.input_tokens},
                          {"output_tokens", s.output_tokens}};
}

inline LedgerSlice usage_from_json(const nlohmann::json& j) {
    LedgerSlice s;
    s.calls_by_tag[static_cast<std::size_t>(Tag::grade)] = j.value("grade", 0L);
    s.calls_by_tag[static_cast<std::size_t>(Tag::reflect)] = j.value("reflect", 0L);
    s.calls_by_tag[static_cast<std::size_t>(Tag::refine)] = j.value("refine", 0L);
    s.calls_by_tag[static_cast<std::size_t>(Tag::consolidate)] = j.value("consolidate", 0L);
    s.input_tokens = j.value("input_tokens", 0L);
    s.output_tokens = j.value("output_tokens", 0L);
    return s;
}

inline nlohmann::json round_to_json(const RoundRecord& r) {
    nlohmann::json evaluations = nlohmann::json::array();
    for (const auto& e : r.evaluations)
        evaluations.push_back(nlohmann::json{{"candidate_id", e.candidate_id},
                                             {"report", report_to_json(e.report)},
                                             {"matrix", e.matrix_counts}});
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& m : r.modes)
        modes.push_back(nlohmann::json{{"true_class", m.true_class},
                                       {"predicted_class", m.predicted_class},
                                       {"count", m.count},
                                       {"share", m.share}});
    nlohmann::json diagnoses = nlohmann::json::array();
    for (const auto& d : r.diagnoses) diagnoses.push_back(diagnosis_to_json(d));
    nlohmann::json patches = nlohmann::json::array();
    for (const auto& p : r.patches) patches.push_back(patch_to_json(p));
    nlohmann::json pool = nlohmann::json::array();
    for (const auto& p : r.pool)
        pool.push_back(nlohmann::json{{"id", p.id},
                                      {"parent_id", p.parent_id},
                                      {"patch_id", p.patch_id},
                                      {"mode", p.mode_label},
                                      {"mean_kappa", p.mean_kappa},
                                      {"chunks", p.chunks},
                                      {"normalized", p.normalized}});
    nlohmann::json j{{"round", r.round},
                     {"minibatch_ids", r.minibatch_ids},
                     {"evaluations", evaluations},
                     {"best_candidate_id", r.best_candidate_id},
                     {"modes", modes},
                     {"diagnoses", diagnoses},
                     {"patches", patches},
                     {"pool", pool},
                     {"selected_ids", r.selected_ids},
                     {"usage", usage_to_json(r.usage)}};
    if (r.consolidated) j["consolidated"] = patch_to_json(*r.consolidated);
    return j;
}

inline RoundRecord round_from_json(const nlohmann::json& j) {
    RoundRecord r;
    r.round = j.value("round", 0);
    r.minibatch_ids = j.value("minibatch_ids", std::vector<std::string>{});
    for (const auto& e : j.value("evaluations", nlohmann::json::array())) {
        BeamMemberRecord b;
        b.candidate_id = e.value("candidate_id", "");
        b.report = report_from_json(e.value("report", nlohmann::json::object()));
        b.matrix_counts = e.value("matrix", std::vector<std::vector<long>>{});
        r.evaluations.push_back(std::move(b));
    }
    r.best_candidate_id = j.value("best_candidate_id", "");
    for (const auto& m : j.value("modes", nlohmann::json::array())) {
        ErrorMode mode;
        mode.true_class = m.value("true_class", 0);
        mode.predicted_class = m.value("predicted_class", 0);
        mode.count = m.value("count", 0L);
        mode.share = m.value("share", 0.0);
        r.modes.push_back(mode);
    }
    for (const auto& d : j.value("diagnoses", nlohmann::json::array()))
        r.diagnoses.push_back(diagnosis_from_json(d));
    for (const auto& p : j.value("patches", nlohmann::json::array()))
        r.patches.push_back(patch_from_json(p));
    if (j.contains("consolidated")) r.consolidated = patch_from_json(j["consolidated"]);
    for (const auto& p : j.value("pool", nlohmann::json::array())) {
        PoolCandidateRecord rec;
        rec.id = p.value("id", "");
        rec.parent_id = p.value("parent_id", "");
        rec.patch_id = p.value("patch_id", "");
        rec.mode_label = p.value("mode", "");
        rec.mean_kappa = p.value("mean_kappa", 0.0);
        rec.chunks = p.value("chunks", 0);
        rec.normalized = p.value("normalized", 0.0);
        r.pool.push_back(std::move(rec));
    }
    r.selected_ids = j.value("selected_ids", std::vector<std::string>{});
    r.usage = usage_from_json(j.value("usage", nlohmann::json::object()));
    return r;
}

inline nlohmann::json graded_to_json(const GradedResponse& g) {
    nlohmann::json j{{"id", g.response_id},
                     {"text", g.response_text},
                     {"predicted", g.predicted_label},
                     {"distribution", g.distribution.probs},
                     {"reasoning", g.reasoning},
                     {"misconfidence", g.misconfidence}};
    if (g.true_label) j["true"] = *g.true_label;
    return j;
}

inline GradedResponse graded_from_json(const nlohmann::json& j) {
    GradedResponse g;
    g.response_id = j.value("id", "");
    g.response_text = j.value("text", "");
    g.predicted_label = j.value("predicted", 0);
    g.distribution = ClassDistribution(j.value("distribution", std::vector<double>{}));
    g.reasoning = j.value("reasoning", "");
    g.misconfidence = j.value("misconfidence", 0.0);
    if (j.contains("true")) g.true_label = j["true"].get<int>();
    return g;
}

inline nlohmann::json ledger_to_json(const RunLedger& ledger) {
    nlohmann::json rounds = nlohmann::json::object();
    for (const auto& [round, slice] : ledger.by_round)
        rounds[std::to_string(round)] = usage_to_json(slice);
    return nlohmann::json{{"totals", usage_to_json(ledger.totals)},
                          {"by_round", rounds},
                          {"estimated_cost_usd", ledger.estimated_cost_usd()},
                          {"price_input_per_million", ledger.pricing.input_per_million},
                          {"price_output_per_million", ledger.pricing.output_per_million}};
}

inline RunLedger ledger_from_json(const nlohmann::json& j) {
    RunLedger ledger;
    ledger.totals = usage_from_json(j.value("totals", nlohmann::json::object()));
    const nlohmann::json by_round = j.value("by_round", nlohmann::json::object());
    for (const auto& [key, slice] : by_round.items())
        ledger.by_round[std::stoi(key)] = usage_from_json(slice);
    ledger.pricing.input_per_million = j.value("price_input_per_million", 0.15);
    ledger.pricing.output_per_million = j.value("price_output_per_million", 0.60);
    return ledger;
}

}  // namespace records

// ─── Inference ───────────────────────────────────────────────────────

struct InferenceOutcome {
    std::vector<GradedResponse> items;
    std::optional<MetricReport> report;  // absent for unlabeled data
    int parse_failures = 0;
};

// Grades every item at temperature 0. Labels are optional; when present,
// metrics cover the successfully parsed items and failures are counted.
inline InferenceOutcome infer(Gateway& gateway, const RubricCandidate& best,
                              const std::vector<ResponseItem>& test_set, const ScoreScale& scale,
                              const GraderConfig& config) {
    InferenceOutcome outcome;
    if (test_set.empty()) return outcome;
    std::vector<std::string> failed;
    outcome.items = grade_batch(gateway, best, test_set, config, &failed);
    outcome.parse_failures = static_cast<int>(failed.size());
    bool labeled = true;
    for (const auto& item : test_set)
        if (!item.label) labeled = false;
    if (labeled && !outcome.items.empty()) {
        outcome.report = metric_report(build_confusion(outcome.items, scale));
    }
    return outcome;
}

// ─── Final selection ─────────────────────────────────────────────────

struct FinalSelection {
    RubricCandidate best;
    MetricReport report;
    ConfusionMatrix matrix;

    FinalSelection() : matrix(ScoreScale(2)) {}
};

// Evaluates every beam member on the full validation set; the highest
// kappa wins, ties broken by accuracy, then shorter prompt, then id.
inline FinalSelection select_final(Gateway& gateway, std::vector<RubricCandidate>& beam,
                                   const std::vector<ResponseItem>& val_set,
                                   const ScoreScale& scale, const GraderConfig& config) {
    if (beam.empty()) throw Error(Errc::invalid_input, "select_final over an empty beam");
    FinalSelection out;
    bool have = false;
    for (auto& candidate : beam) {
        EvaluationResult eval = evaluate_candidate(gateway, candidate, val_set, scale, config);
        candidate.cached["val"] = eval.report;
        bool better = false;
        if (!have) {
            better = true;
        } else if (eval.report.kappa != out.report.kappa) {
            better = eval.report.kappa > out.report.kappa;
        } else if (eval.report.accuracy != out.report.accuracy) {
            better = eval.report.accuracy > out.report.accuracy;
        } else if (candidate.prompt_text.size() != out.best.prompt_text.size()) {
            better = candidate.prompt_text.size() < out.best.prompt_text.size();
        } else {
            better = candidate.id < out.best.id;
        }
        if (better) {
            out.best = candidate;
            out.report = eval.report;
            out.matrix = eval.matrix;
            have = true;
        }
    }
    return out;
}

// ─── Orchestrator ────────────────────────────────────────────────────

class Orchestrator {
public:
    Orchestrator(RunConfig config, std::shared_ptr<Gateway> gateway,
                 std::shared_ptr<EmbeddingProvider> embedder)
        : config_(std::move(config)), gateway_(std::move(gateway)), embedder_(std::move(embedder)) {
        config_.validate();
    }

    // Runs the full loop. `run_dir` may be empty (no persistence).
    // `stop_after_round` truncates the session (used to test resuming);
    // 0 means run to completion.
    OptimizationResult run(const Dataset& dataset, const std::string& initial_rubric,
                           const std::filesystem::path& run_dir = {},
                           int stop_after_round = 0) {
        DatasetSplit split = split_dataset(dataset, config_.ratios, config_.seed);
        State state;
        state.scale = dataset.scale;
        state.beam = {RubricCandidate::root(initial_rubric)};
        if (!run_dir.empty()) init_run_dir(run_dir, initial_rubric);
        return drive(state, split, run_dir, stop_after_round);
    }

    // Continues a persisted run from the round after the last recorded
    // one. The dataset must be the one the run was started with.
    OptimizationResult resume(const Dataset& dataset, const std::filesystem::path& run_dir) {
        DatasetSplit split = split_dataset(dataset, config_.ratios, config_.seed);
        State state;
        state.scale = dataset.scale;
        load_state(run_dir, state);
        gateway_->restore_ledger(state.loaded_ledger);
        return drive(state, split, run_dir, 0);
    }

private:
    struct State {
        ScoreScale scale = ScoreScale(2);
        std::vector<RubricCandidate> beam;
        std::vector<GradedResponse> prev_graded;  // best member's graded items
        std::vector<RoundRecord> rounds;
        int next_round = 1;
        RunLedger loaded_ledger;
    };

    OptimizationResult drive(State& state, const DatasetSplit& split,
                             const std::filesystem::path& run_dir, int stop_after_round) {
        const ScoreScale& scale = state.scale;
        GraderConfig grader_cfg = config_.grader_config(scale.num_classes);
        AgentConfig agent_cfg = config_.agent_config();

        double best_kappa_seen = -2.0;
        int stale_rounds = 0;

        for (int round = state.next_round; round <= config_.rounds; ++round) {
            if (stop_after_round > 0 && round > stop_after_round) break;
            gateway_->set_round(round);

            RoundRecord record;
            record.round = round;

            auto minibatch =
                sample_minibatch(state.prev_graded, split.train.items, config_.knn,
                                 config_.batch_cap, config_.anchors, config_.seed, round,
                                 *embedder_);
            for (const auto& item : minibatch) record.minibatch_ids.push_back(item.id);

            // Evaluate the incoming beam on this round's minibatch.
            std::vector<EvaluationResult> evals;
            evals.reserve(state.beam.size());
            int best_index = 0;
            for (std::size_t b = 0; b < state.beam.size(); ++b) {
                EvaluationResult eval = evaluate_candidate(*gateway_, state.beam[b], minibatch,
                                                           scale, grader_cfg);
                state.beam[b].cached["minibatch:r" + std::to_string(round)] = eval.report;
                record.evaluations.push_back(BeamMemberRecord{
                    state.beam[b].id, eval.report, eval.matrix.counts});
                if (b > 0) {
                    const auto& cur = eval.report;
                    const auto& best = evals[static_cast<std::size_t>(best_index)].report;
                    if (cur.kappa > best.kappa ||
                        (cur.kappa == best.kappa &&
                         (cur.accuracy > best.accuracy ||
                          (cur.accuracy == best.accuracy &&
                           state.beam[b].id < state.beam[static_cast<std::size_t>(best_index)].id))))
                        best_index = static_cast<int>(b);
                }
                evals.push_back(std::move(eval));
            }
            const RubricCandidate& best_member = state.beam[static_cast<std::size_t>(best_index)];
            record.best_candidate_id = best_member.id;

            ConfusionMatrix matrix = evals[static_cast<std::size_t>(best_index)].matrix;
            if (config_.pooled_matrix) {
                for (std::size_t b = 0; b < evals.size(); ++b)
                    if (static_cast<int>(b) != best_index) matrix.add(evals[b].matrix);
            }
            record.modes = top_k_modes(matrix, config_.top_k_modes);

            const std::vector<GradedResponse>& best_graded =
                evals[static_cast<std::size_t>(best_index)].graded;
            std::string rules = best_member.rules_section();

            std::vector<RulePatch> patches;
            std::optional<RulePatch> consolidated;
            if (!record.modes.empty()) {
                if (config_.baseline_mode) {
                    build_aggregate_patch(best_graded, matrix, rules, agent_cfg, round, record,
                                          patches);
                } else {
                    build_mode_patches(best_graded, matrix, record.modes, rules, agent_cfg, round,
                                       record, patches);
                    if (!patches.empty()) {
                        consolidated =
                            consolidate(*gateway_, patches, matrix, rules, agent_cfg);
                        if (consolidated) {
                            consolidated->id = "r" + std::to_string(round) + "pc";
                            record.consolidated = consolidated;
                        }
                    }
                }
            }
            record.patches = patches;

            if (patches.empty() && !consolidated) {
                // Nothing to expand this round; the beam carries over.
                log_info("round " + std::to_string(round) +
                         ": no usable patches; beam carried over");
                record.selected_ids = ids_of(state.beam);
                finish_round(record, state, run_dir, best_graded);
            } else {
                std::vector<RulePatch> all_patches = patches;
                if (consolidated) all_patches.push_back(*consolidated);

                CandidatePool pool = expand_candidates(state.beam, all_patches, round,
                                                       config_.rules_word_cap);
                int budget = config_.ucb_budget_chunks > 0
                                 ? config_.ucb_budget_chunks
                                 : 2 * static_cast<int>(pool.candidates.size());
                ucb_evaluate(pool, minibatch, budget, config_.ucb_chunk_size, config_.ucb_c,
                             [&](const RubricCandidate& cand,
                                 const std::vector<ResponseItem>& chunk) {
                                 return evaluate_candidate(*gateway_, cand, chunk, scale,
                                                           grader_cfg)
                                     .report.kappa;
                             });
                for (std::size_t ci = 0; ci < pool.candidates.size(); ++ci) {
                    const auto& cand = pool.candidates[ci];
                    const auto& stat = pool.stats[ci];
                    record.pool.push_back(PoolCandidateRecord{
                        cand.id, cand.parent_id, cand.patch_id,
                        cand.target_mode ? cand.target_mode->label() : "",
                        stat.mean_kappa, stat.eval_count, stat.normalized});
                }

                state.beam = diverse_select(pool, config_.beam, config_.lambda);
                record.selected_ids = ids_of(state.beam);
                finish_round(record, state, run_dir, best_graded);
            }

            // Optional early stop on stale best-beam kappa.
            if (config_.patience > 0) {
                double round_best = record.evaluations[static_cast<std::size_t>(best_index)]
                                        .report.kappa;
                if (round_best > best_kappa_seen + 1e-12) {
                    best_kappa_seen = round_best;
                    stale_rounds = 0;
                } else if (++stale_rounds >= config_.patience) {
                    log_info("early stop after round " + std::to_string(round) +
                             " (no improvement for " + std::to_string(stale_rounds) + " rounds)");
                    break;
                }
            }
        }

        if (stop_after_round > 0 && stop_after_round < config_.rounds) {
            // Partial session: everything needed to resume is on disk.
            OptimizationResult partial;
            partial.final_beam = state.beam;
            partial.rounds = state.rounds;
            partial.ledger = gateway_->ledger_snapshot();
            if (!state.beam.empty()) partial.best = state.beam.front();
            return partial;
        }

        return finalize(state, split, run_dir, grader_cfg);
    }

    void build_mode_patches(const std::vector<GradedResponse>& graded,
                            const ConfusionMatrix& matrix, const std::vector<ErrorMode>& modes,
                            const std::string& rules, const AgentConfig& agent_cfg, int round,
                            RoundRecord& record, std::vector<RulePatch>& patches) {
        for (std::size_t m = 0; m < modes.size(); ++m) {
            const ErrorMode& mode = modes[m];
            try {
                ModeContext ctx = assemble_mode_context(graded, matrix, mode, config_.error_cap,
                                                        config_.contrastive_n);
                ModeDiagnosis diagnosis =
                    run_reflector(*gateway_, rules, ctx, modes, agent_cfg);
                record.diagnoses.push_back(diagnosis);
                std::vector<ModeKey> others;
                for (const auto& other : modes) {
                    if (other.true_class == mode.true_class &&
                        other.predicted_class == mode.predicted_class)
                        continue;
                    others.push_back(ModeKey::cell(other));
                }
                RulePatch patch = run_refiner(*gateway_, rules, diagnosis, ctx.error_examples,
                                              others, config_.edit_budget, agent_cfg);
                patch.id = "r" + std::to_string(round) + "p" + std::to_string(m);
                patches.push_back(std::move(patch));
            } catch (const Error& e) {
                if (e.code() == Errc::parse) {
                    log_warn("round " + std::to_string(round) + ": mode " + mode.label() +
                             " skipped (" + e.what() + ")");
                    continue;
                }
                throw;
            }
        }
    }

    void build_aggregate_patch(const std::vector<GradedResponse>& graded,
                               const ConfusionMatrix& matrix, const std::string& rules,
                               const AgentConfig& agent_cfg, int round, RoundRecord& record,
                               std::vector<RulePatch>& patches) {
        std::vector<GradedResponse> errors;
        for (const auto& g : graded)
            if (!g.correct()) errors.push_back(g);
        sort_by_misconfidence(errors);
        if (static_cast<int>(errors.size()) > config_.error_cap)
            errors.resize(static_cast<std::size_t>(config_.error_cap));
        try {
            ModeDiagnosis diagnosis =
                run_aggregate_reflector(*gateway_, rules, errors, matrix, agent_cfg);
            record.diagnoses.push_back(diagnosis);
            RulePatch patch = run_refiner(*gateway_, rules, diagnosis, errors, {},
                                          config_.edit_budget, agent_cfg);
            patch.id = "r" + std::to_string(round) + "p0";
            patches.push_back(std::move(patch));
        } catch (const Error& e) {
            if (e.code() == Errc::parse) {
                log_warn("round " + std::to_string(round) + ": aggregate patch skipped (" +
                         e.what() + ")");
                return;
            }
            throw;
        }
    }

    void finish_round(RoundRecord& record, State& state, const std::filesystem::path& run_dir,
                      const std::vector<GradedResponse>& best_graded) {
        record.usage = gateway_->ledger_snapshot().by_round[record.round];
        state.prev_graded = best_graded;
        state.rounds.push_back(record);
        if (!run_dir.empty()) persist_round(run_dir, record, state);
    }

    OptimizationResult finalize(State& state, const DatasetSplit& split,
                                const std::filesystem::path& run_dir,
                                const GraderConfig& grader_cfg) {
        gateway_->set_round(config_.rounds + 1);

        OptimizationResult result;
        result.rounds = state.rounds;

        FinalSelection selection =
            select_final(*gateway_, state.beam, split.val.items, state.scale, grader_cfg);
        result.best = selection.best;
        result.val_report = selection.report;
        result.val_matrix_counts = selection.matrix.counts;
        result.final_beam = state.beam;  // carries the cached val reports

        if (config_.run_test_inference && !split.test.items.empty()) {
            InferenceOutcome outcome =
                infer(*gateway_, result.best, split.test.items, state.scale, grader_cfg);
            result.test_report = outcome.report;
            result.test_items = std::move(outcome.items);
            result.test_parse_failures = outcome.parse_failures;
        }

        result.ledger = gateway_->ledger_snapshot();
        if (!run_dir.empty()) persist_result(run_dir, result);
        return result;
    }

    static std::vector<std::string> ids_of(const std::vector<RubricCandidate>& beam) {
        std::vector<std::string> ids;
        ids.reserve(beam.size());
        for (const auto& c : beam) ids.push_back(c.id);
        return ids;
    }

    // ── Persistence ──────────────────────────────────────────────────

    static std::string round_file_name(int round) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "round_%02d.json", round);
        return buf;
    }

    void init_run_dir(const std::filesystem::path& dir, const std::string& initial_rubric) {
        std::filesystem::create_directories(dir / "rounds");
        std::filesystem::create_directories(dir / "records");
        std::filesystem::create_directories(dir / "candidates");
        write_file(dir / "config.json", config_to_json(config_).dump(2) + "\n");
        write_file(dir / "initial_rubric.txt", initial_rubric);
        write_file(dir / "candidates" / "P0.txt", initial_rubric);
    }

    void persist_round(const std::filesystem::path& dir, const RoundRecord& record,
                       const State& state) {
        write_file(dir / "rounds" / round_file_name(record.round),
                   records::round_to_json(record).dump(2) + "\n");
        nlohmann::json beam_meta = nlohmann::json::array();
        for (const auto& cand : state.beam) {
            write_file(dir / "candidates" / (cand.id + ".txt"), cand.prompt_text);
            nlohmann::json meta{{"id", cand.id},
                                {"parent_id", cand.parent_id},
                                {"patch_id", cand.patch_id}};
            if (cand.target_mode) meta["mode"] = records::mode_key_to_json(*cand.target_mode);
            beam_meta.push_back(meta);
        }
        write_file(dir / "rounds" / ("beam_after_" + round_file_name(record.round)),
                   beam_meta.dump(2) + "\n");
        std::ofstream items(dir / "records" /
                            ("round_" + two_digit(record.round) + "_best_items.jsonl"));
        for (const auto& g : state.prev_graded)
            items << records::graded_to_json(g).dump() << "\n";
        write_file(dir / "ledger.json",
                   records::ledger_to_json(gateway_->ledger_snapshot()).dump(2) + "\n");
    }

    void persist_result(const std::filesystem::path& dir, const OptimizationResult& result) {
        nlohmann::json j{{"best_id", result.best.id},
                         {"best_prompt_file", "candidates/" + result.best.id + ".txt"},
                         {"val_report", records::report_to_json(result.val_report)},
                         {"val_matrix", result.val_matrix_counts},
                         {"rounds_completed", result.rounds.size()},
                         {"test_parse_failures", result.test_parse_failures}};
        if (result.test_report) j["test_report"] = records::report_to_json(*result.test_report);
        nlohmann::json beam = nlohmann::json::array();
        for (const auto& cand : result.final_beam) {
            nlohmann::json entry{{"id", cand.id}};
            auto it = cand.cached.find("val");
            if (it != cand.cached.end()) entry["val_report"] = records::report_to_json(it->second);
            beam.push_back(entry);
        }
        j["final_beam"] = beam;
        write_file(dir / "result.json", j.dump(2) + "\n");
        write_file(dir / "candidates" / (result.best.id + ".txt"), result.best.prompt_text);
        write_file(dir / "best_prompt.txt", result.best.prompt_text);
        std::ofstream items(dir / "records" / "test_items.jsonl");
        for (const auto& g : result.test_items)
            items << records::graded_to_json(g).dump() << "\n";
        write_file(dir / "ledger.json",
                   records::ledger_to_json(gateway_->ledger_snapshot()).dump(2) + "\n");
    }

    void load_state(const std::filesystem::path& dir, State& state) {
        auto rounds_dir = dir / "rounds";
        if (!std::filesystem::is_directory(rounds_dir))
            throw Error(Errc::invalid_input, "not a run directory: " + dir.string());
        std::vector<std::filesystem::path> round_files;
        for (const auto& entry : std::filesystem::directory_iterator(rounds_dir)) {
            auto name = entry.path().filename().string();
            if (name.rfind("round_", 0) == 0 && entry.path().extension() == ".json")
                round_files.push_back(entry.path());
        }
        std::sort(round_files.begin(), round_files.end());
        for (const auto& path : round_files)
            state.rounds.push_back(records::round_from_json(read_json(path)));

        if (state.rounds.empty()) {
            state.beam = {RubricCandidate::root(read_file(dir / "initial_rubric.txt"))};
            state.next_round = 1;
            return;
        }

        const RoundRecord& last = state.rounds.back();
        state.next_round = last.round + 1;
        nlohmann::json beam_meta =
            read_json(dir / "rounds" / ("beam_after_" + round_file_name(last.round)));
        for (const auto& meta : beam_meta) {
            RubricCandidate cand;
            cand.id = meta.value("id", "");
            cand.parent_id = meta.value("parent_id", "");
            cand.patch_id = meta.value("patch_id", "");
            if (meta.contains("mode")) cand.target_mode = records::mode_key_from_json(meta["mode"]);
            cand.prompt_text = read_file(dir / "candidates" / (cand.id + ".txt"));
            state.beam.push_back(std::move(cand));
        }
        std::ifstream items(dir / "records" /
                            ("round_" + two_digit(last.round) + "_best_items.jsonl"));
        std::string line;
        while (std::getline(items, line)) {
            if (trim(line).empty()) continue;
            state.prev_graded.push_back(records::graded_from_json(nlohmann::json::parse(line)));
        }
        state.loaded_ledger = records::ledger_from_json(read_json(dir / "ledger.json"));
    }

    static std::string two_digit(int n) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%02d", n);
        return buf;
    }

    static void write_file(const std::filesystem::path& path, const std::string& content) {
        std::ofstream out(path);
        if (!out) throw Error(Errc::runtime, "cannot write " + path.string());
        out << content;
    }

    static std::string read_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(Errc::invalid_input, "cannot read " + path.string());
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    }

    static nlohmann::json read_json(const std::filesystem::path& path) {
        nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
        if (j.is_discarded()) throw Error(Errc::invalid_input, "invalid JSON in " + path.string());
        return j;
    }

    RunConfig config_;
    std::shared_ptr<Gateway> gateway_;
    std::shared_ptr<EmbeddingProvider> embedder_;
};

}  // namespace caro
