#pragma once

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "caro/confusion.hpp"
#include "caro/gateway.hpp"
#include "caro/metrics.hpp"

namespace caro {

// ─── Edit budgets ────────────────────────────────────────────────────

enum class EditBudget { small, medium, large };

inline int budget_max_rules(EditBudget b) {
    switch (b) {
        case EditBudget::small: return 1;
        case EditBudget::medium: return 3;
        case EditBudget::large: return 5;
    }
    return 3;
}

inline std::string budget_phrase(EditBudget b) {
    switch (b) {
        case EditBudget::small: return "small (1 new rule)";
        case EditBudget::medium: return "medium (2-3 new rules)";
        case EditBudget::large: return "large (4-5 new rules)";
    }
    return "medium (2-3 new rules)";
}

inline EditBudget parse_budget(const std::string& name) {
    std::string n = to_lower(trim(name));
    if (n == "small") return EditBudget::small;
    if (n == "medium") return EditBudget::medium;
    if (n == "large") return EditBudget::large;
    throw Error(Errc::config, "unknown edit budget: " + name);
}

inline const char* budget_name(EditBudget b) {
    switch (b) {
        case EditBudget::small: return "small";
        case EditBudget::medium: return "medium";
        case EditBudget::large: return "large";
    }
    return "medium";
}

// ─── Structured agent outputs ────────────────────────────────────────

// Reflector output for one confusion cell.
struct ModeDiagnosis {
    ModeKey mode;
    std::string root_cause;
    std::vector<std::string> misleading_patterns;
    std::string boundary_rationale;  // "why these are i, not j"
    std::vector<std::string> proposed_fixes;
    std::string safety_check;
};

// Refiner or Consolidator output: concrete rule sentences. For a
// consolidated patch rule_priorities records which priority level each
// rule belongs to; for per-mode patches it is uniformly `priority`.
struct RulePatch {
    std::string id;
    ModeKey mode;
    std::vector<std::string> rules;
    std::vector<int> rule_priorities;
    int priority = 1;
    std::vector<std::string> tie_breakers;
    EditBudget budget = EditBudget::medium;
};

// Settings for the optimizer-agent calls (Reflector/Refiner/
// Consolidator); grading has its own fixed-temperature path.
struct AgentConfig {
    double temperature = 0.3;
    int max_tokens = 1024;
};

inline constexpr const char* kReflectorPromptVersion = "reflector-prompt/v1";
inline constexpr const char* kRefinerPromptVersion = "refiner-prompt/v1";
inline constexpr const char* kConsolidatorPromptVersion = "consolidator-prompt/v1";

inline constexpr const char* kAgentSystemPrompt =
    "You are part of a rubric-repair pipeline for an LLM grader. Answer in the exact format "
    "requested; do not add commentary outside the requested sections.";

// ─── Reflector prompt ────────────────────────────────────────────────

namespace detail {

inline std::string render_error_example(const GradedResponse& g, int index) {
    std::string out = "Example " + std::to_string(index) + ": \"" + g.response_text + "\"\n";
    out += "True: " + std::to_string(g.true_label.value_or(-1)) +
           "  Pred: " + std::to_string(g.predicted_label) + "  Reasoning: " + g.reasoning + "\n";
    return out;
}

inline std::string render_contrastive_list(const std::vector<GradedResponse>& items, int cls) {
    std::string out = "Correctly classified as " + std::to_string(cls) + ":\n";
    if (items.empty()) {
        out += "(none available)\n";
        return out;
    }
    for (const auto& g : items)
        out += "- \"" + g.response_text + "\" (reasoning: " + g.reasoning + ")\n";
    return out;
}

inline std::string render_mode_list(const std::vector<ErrorMode>& modes) {
    std::vector<std::string> labels;
    labels.reserve(modes.size());
    for (const auto& m : modes) labels.push_back(m.label());
    return join(labels, ", ");
}

}  // namespace detail

inline std::string build_reflector_prompt(const std::string& rules, const ModeContext& ctx,
                                          const std::vector<ErrorMode>& all_modes) {
    const int i = ctx.mode.true_class;
    const int j = ctx.mode.predicted_class;
    std::string out =
        "You are the Reflector: diagnose one specific confusion mode of an LLM grader.\n\n";
    out += "[CURRENT RULES]\n" + rules + "\n\n";
    out += "[GLOBAL CONTEXT]\n" + ctx.global_summary;
    if (!all_modes.empty())
        out += "\nModes under repair this round: " + detail::render_mode_list(all_modes) + "\n";
    out += "\n[LOCAL ERROR EXAMPLES]\n";
    if (ctx.error_examples.empty()) out += "(none available)\n";
    for (std::size_t n = 0; n < ctx.error_examples.size(); ++n) {
        out += detail::render_error_example(ctx.error_examples[n], static_cast<int>(n) + 1);
        if (n + 1 < ctx.error_examples.size()) out += "\n";
    }
    out += "\n[CONTRASTIVE CORRECT EXAMPLES]\n";
    out += detail::render_contrastive_list(ctx.contrastive_true, i);
    out += detail::render_contrastive_list(ctx.contrastive_pred, j);
    out += "\n[TASK]\nAnalyze WHY the " + std::to_string(i) + " -> " + std::to_string(j) +
           " confusion occurs. Identify misleading patterns and propose rule fixes.\n";
    out += "Respond with these labeled sections:\n";
    out += "Root Cause:\nMisleading Patterns:\nWhy These Are " + std::to_string(i) + ", Not " +
           std::to_string(j) + ":\nProposed Rule Fix:\nSafety Check:\n";
    return out;
}

// Mixed-error variant used by the aggregate-feedback baseline: same
// shape, but no single-mode focus.
inline std::string build_aggregate_reflector_prompt(const std::string& rules,
                                                    const std::vector<GradedResponse>& errors,
                                                    const ConfusionMatrix& matrix) {
    std::string out =
        "You are the Reflector: diagnose why an LLM grader misclassifies responses.\n\n";
    out += "[CURRENT RULES]\n" + rules + "\n\n";
    out += "[GLOBAL CONTEXT]\n" + render_global_summary(matrix);
    out += "\n[ERROR EXAMPLES]\n";
    if (errors.empty()) out += "(none available)\n";
    for (std::size_t n = 0; n < errors.size(); ++n) {
        out += detail::render_error_example(errors[n], static_cast<int>(n) + 1);
        if (n + 1 < errors.size()) out += "\n";
    }
    out += "\n[TASK]\nAnalyze why these misclassifications occur. Identify misleading patterns "
           "and propose rule fixes.\n";
    out += "Respond with these labeled sections:\n";
    out += "Root Cause:\nMisleading Patterns:\nProposed Rule Fix:\nSafety Check:\n";
    return out;
}

// ─── Diagnosis parsing ───────────────────────────────────────────────

namespace detail {

inline std::string strip_decorations(const std::string& line) {
    std::string s = trim(line);
    while (!s.empty() && (s.front() == '#' || s.front() == '*' || s.front() == '>')) s.erase(s.begin());
    s = trim(s);
    while (s.size() >= 2 && s.compare(s.size() - 2, 2, "**") == 0) s.erase(s.size() - 2);
    return trim(s);
}

inline std::string strip_bullet(const std::string& line) {
    static const std::regex bullet_re(R"(^\s*(?:\d+[\.\)]|[-*•]|\(\d+\))\s*)");
    return trim(std::regex_replace(line, bullet_re, ""));
}

// If the line begins with one of the aliases, returns the remainder
// after the label (colon/dash stripped).
inline std::optional<std::string> match_heading(const std::string& line,
                                                const std::vector<std::string>& aliases) {
    std::string stripped = strip_decorations(strip_bullet(line));
    std::string lowered = to_lower(stripped);
    for (const auto& alias : aliases) {
        if (lowered.rfind(alias, 0) == 0) {
            std::string rest = stripped.substr(alias.size());
            std::size_t p = 0;
            // Skip the tail of the heading ("Why These Are 0, Not 1:").
            std::size_t colon = rest.find(':');
            if (!rest.empty() && (rest[0] == ':' || rest[0] == '-')) {
                p = 1;
            } else if (colon != std::string::npos && colon <= 24) {
                p = colon + 1;
            } else if (!rest.empty() && rest[0] != ' ') {
                continue;  // label is a prefix of a longer word
            }
            return trim(rest.substr(p));
        }
    }
    return std::nullopt;
}

inline std::vector<std::string> listify(const std::vector<std::string>& lines) {
    std::vector<std::string> items;
    for (const auto& line : lines) {
        std::string s = strip_bullet(strip_decorations(line));
        if (!s.empty()) items.push_back(s);
    }
    return items;
}

}  // namespace detail

// Label-keyed and order-insensitive: agent outputs drift in section
// ordering and markdown decoration. A missing Safety Check is tolerated;
// a missing Root Cause or empty fix list is a hard parse failure.
inline ModeDiagnosis parse_diagnosis(const std::string& text, const ModeKey& mode) {
    static const std::vector<std::pair<int, std::vector<std::string>>> sections = {
        {0, {"root cause"}},
        {1, {"misleading patterns", "misleading pattern"}},
        {2, {"why these are", "boundary rationale", "boundary"}},
        {3, {"proposed rule fixes", "proposed rule fix", "proposed fixes", "proposed fix",
             "rule fixes", "rule fix"}},
        {4, {"safety checks", "safety check", "safety"}},
    };

    std::vector<std::vector<std::string>> content(5);
    int current = -1;
    for (const auto& line : split_lines(text)) {
        bool matched = false;
        for (const auto& [idx, aliases] : sections) {
            if (auto rest = detail::match_heading(line, aliases)) {
                current = idx;
                if (!rest->empty()) content[static_cast<std::size_t>(idx)].push_back(*rest);
                matched = true;
                break;
            }
        }
        if (!matched && current >= 0 && !trim(line).empty())
            content[static_cast<std::size_t>(current)].push_back(line);
    }

    ModeDiagnosis diagnosis;
    diagnosis.mode = mode;
    diagnosis.root_cause = trim(join(content[0], " "));
    diagnosis.misleading_patterns = detail::listify(content[1]);
    diagnosis.boundary_rationale = trim(join(content[2], " "));
    diagnosis.proposed_fixes = detail::listify(content[3]);
    diagnosis.safety_check = trim(join(content[4], " "));

    if (diagnosis.root_cause.empty())
        throw Error(Errc::parse, "diagnosis has no Root Cause section");
    if (diagnosis.proposed_fixes.empty())
        throw Error(Errc::parse, "diagnosis has no proposed rule fixes");
    return diagnosis;
}

// ─── Refiner prompt ──────────────────────────────────────────────────

namespace detail {

inline std::string render_diagnosis(const ModeDiagnosis& d) {
    std::string out = "Root Cause: " + d.root_cause + "\n";
    out += "Misleading Patterns: " + join(d.misleading_patterns, "; ") + "\n";
    if (!d.boundary_rationale.empty()) out += "Boundary: " + d.boundary_rationale + "\n";
    out += "Proposed Rule Fix: " + join(d.proposed_fixes, "; ") + "\n";
    if (!d.safety_check.empty()) out += "Safety Check: " + d.safety_check + "\n";
    return out;
}

inline std::string render_other_modes(const std::vector<ModeKey>& other_modes) {
    if (other_modes.empty()) return "(no other active modes)";
    std::vector<std::string> parts;
    parts.reserve(other_modes.size());
    for (const auto& m : other_modes) parts.push_back("(" + m.label() + ")");
    return join(parts, ", ");
}

}  // namespace detail

inline std::string build_refiner_prompt(const std::string& rules, const ModeDiagnosis& diagnosis,
                                        const std::vector<GradedResponse>& errors,
                                        const std::vector<ModeKey>& other_modes,
                                        EditBudget budget) {
    const std::string mode_label = diagnosis.mode.label();
    const std::string others = detail::render_other_modes(other_modes);

    std::string out = "You are the Refiner: convert a diagnosis into concrete rubric rules.\n\n";
    out += "[INPUT]\n";
    out += "- Current rules:\n" + rules + "\n";
    out += "- Diagnosis for mode " + mode_label + ":\n" + detail::render_diagnosis(diagnosis);
    out += "- Error examples:\n";
    if (errors.empty()) out += "(none available)\n";
    for (std::size_t n = 0; n < errors.size(); ++n) {
        out += std::to_string(n + 1) + ". \"" + errors[n].response_text + "\" (true " +
               std::to_string(errors[n].true_label.value_or(-1)) + ", predicted " +
               std::to_string(errors[n].predicted_label) + ")\n";
    }
    out += "- Other modes: " + others + "\n";
    out += "\n[CONSTRAINTS]\n";
    if (diagnosis.mode.is_cell())
        out += "1. Fix must target " + mode_label + " confusion specifically\n";
    else
        out += "1. Fix the dominant misclassification patterns shown in the errors\n";
    out += "2. Must NOT break existing correct classifications\n";
    out += "3. Must be COMPATIBLE with fixes for " + others + "\n";
    out += "4. Edit budget: " + budget_phrase(budget) + "\n";
    out += "\n[OUTPUT FORMAT]\nGenerate improved rules that:\n";
    out += "- Include clear distinguishing criteria\n";
    out += "- Use specific patterns from error analysis\n";
    out += "- State safety considerations for other modes\n";
    out += "Output ONLY the new rules as a numbered list, one rule per line.\n";
    return out;
}

// ─── Rule patch parsing ──────────────────────────────────────────────

// Enumerated rules preferred; a sentence-per-line reply with no markers
// is accepted as a fallback. Rules beyond the edit budget are dropped
// with a recorded warning.
inline RulePatch parse_rule_patch(const std::string& text, const ModeKey& mode,
                                  EditBudget budget) {
    static const std::regex marker_re(R"(^\s*(?:\d+[\.\)]|[-*•])\s+)");
    std::vector<std::string> marked;
    std::vector<std::string> plain;
    for (const auto& line : split_lines(text)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        if (std::regex_search(t, marker_re)) {
            std::string rule = detail::strip_bullet(t);
            if (!rule.empty()) marked.push_back(rule);
        } else {
            std::string plain_line = detail::strip_decorations(t);
            if (!plain_line.empty()) plain.push_back(plain_line);
        }
    }

    std::vector<std::string> rules = marked;
    if (rules.empty()) {
        for (const auto& line : plain) {
            // Header-ish lines ("New rules:") carry no rule content.
            if (line.back() == ':' && plain.size() > 1) continue;
            rules.push_back(line);
        }
    }
    if (rules.empty()) throw Error(Errc::parse, "no rules found in refiner output");

    int cap = budget_max_rules(budget);
    if (static_cast<int>(rules.size()) > cap) {
        log_warn("rule patch for " + mode.label() + " exceeded " + budget_name(budget) +
                 " budget (" + std::to_string(rules.size()) + " rules); truncated to " +
                 std::to_string(cap));
        rules.resize(static_cast<std::size_t>(cap));
    }

    RulePatch patch;
    patch.mode = mode;
    patch.rules = std::move(rules);
    patch.rule_priorities.assign(patch.rules.size(), 1);
    patch.budget = budget;
    return patch;
}

// ─── Consolidation ───────────────────────────────────────────────────

namespace detail {

// Descending matrix count at the patch's own cell, ties by (i, j) asc —
// the same order top_k_modes would give restricted to these modes.
inline std::vector<RulePatch> order_by_dominance(std::vector<RulePatch> patches,
                                                 const ConfusionMatrix& matrix) {
    std::sort(patches.begin(), patches.end(), [&](const RulePatch& a, const RulePatch& b) {
        long ca = matrix.at(a.mode.true_class, a.mode.predicted_class);
        long cb = matrix.at(b.mode.true_class, b.mode.predicted_class);
        if (ca != cb) return ca > cb;
        if (a.mode.true_class != b.mode.true_class) return a.mode.true_class < b.mode.true_class;
        return a.mode.predicted_class < b.mode.predicted_class;
    });
    return patches;
}

}  // namespace detail

inline std::string build_consolidation_prompt(const std::string& rules,
                                              const std::vector<RulePatch>& ordered_patches,
                                              const ConfusionMatrix& matrix) {
    std::string out =
        "You are the Consolidator: merge per-mode rule patches into one priority-weighted "
        "ruleset.\n\n";
    out += "[CURRENT RULES]\n" + rules + "\n\n";
    out += "[PER-MODE PATCHES]\n";
    for (std::size_t p = 0; p < ordered_patches.size(); ++p) {
        const auto& patch = ordered_patches[p];
        long count = matrix.at(patch.mode.true_class, patch.mode.predicted_class);
        out += "Priority " + std::to_string(p + 1) + ": mode " + patch.mode.label() + " (" +
               std::to_string(count) + " errors)\n";
        for (std::size_t r = 0; r < patch.rules.size(); ++r)
            out += std::to_string(r + 1) + ". " + patch.rules[r] + "\n";
    }
    out += "\n[TASK]\nMerge the patches into a single coherent ruleset and keep every "
           "still-relevant existing rule. The dominant mode keeps up to 3 detailed rules; every "
           "lower priority gets exactly one single-sentence guard. Add at least one tie-breaker "
           "directive of the form: \"If Priority 1 criteria suggest score X but Priority 2 "
           "criteria suggest score Y, assign score X unless <specific exception condition>.\"\n";
    out += "\n[OUTPUT FORMAT]\n";
    out += "Priority 1: <title>\n- <rule>\n- <rule>\n";
    out += "Priority 2: <title>\n- <guard rule>\n";
    out += "(continue for each priority)\n";
    out += "Conflict Resolution:\n- <tie-breaker directive>\n";
    return out;
}

// Parses the priority-structured consolidated ruleset. Keeps at most 3
// rules for priority 1 and one guard per lower priority; max_total_rules
// bounds the flattened list by the sum of the input patches' budgets.
inline RulePatch parse_consolidated(const std::string& text, int num_input_patches,
                                    int max_total_rules) {
    static const std::regex priority_re(R"(^\s*[#*>\s]*priority\s+(\d{1,3}))",
                                        std::regex::icase);
    static const std::vector<std::string> conflict_aliases = {"conflict resolution",
                                                              "tie-breakers", "tie-breaker",
                                                              "tie breakers", "tie breaker"};

    RulePatch patch;
    patch.mode = ModeKey::consolidated();
    patch.priority = 1;

    int current_priority = 0;
    bool in_conflict = false;
    for (const auto& line : split_lines(text)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        std::smatch m;
        if (std::regex_search(t, m, priority_re)) {
            current_priority = std::stoi(m[1].str());
            in_conflict = false;
            continue;
        }
        if (detail::match_heading(t, conflict_aliases)) {
            in_conflict = true;
            auto rest = detail::match_heading(t, conflict_aliases);
            if (!rest->empty()) patch.tie_breakers.push_back(*rest);
            continue;
        }
        std::string item = detail::strip_bullet(detail::strip_decorations(t));
        if (item.empty()) continue;
        if (in_conflict) {
            patch.tie_breakers.push_back(item);
        } else if (current_priority >= 1) {
            int kept = 0;
            for (int p : patch.rule_priorities)
                if (p == current_priority) ++kept;
            int limit = current_priority == 1 ? 3 : 1;
            if (kept >= limit) {
                log_warn("consolidated ruleset: extra rule at priority " +
                         std::to_string(current_priority) + " dropped");
                continue;
            }
            patch.rules.push_back(item);
            patch.rule_priorities.push_back(current_priority);
        }
    }

    if (patch.rules.empty())
        throw Error(Errc::parse, "consolidated output has no priority rules");
    if (num_input_patches >= 2 && patch.tie_breakers.empty())
        throw Error(Errc::parse, "consolidated output has no tie-breaker directive");
    if (static_cast<int>(patch.rules.size()) > max_total_rules) {
        log_warn("consolidated ruleset exceeds the summed edit budgets; truncated to " +
                 std::to_string(max_total_rules));
        patch.rules.resize(static_cast<std::size_t>(max_total_rules));
        patch.rule_priorities.resize(static_cast<std::size_t>(max_total_rules));
    }
    return patch;
}

// ─── Gateway-backed agent calls ──────────────────────────────────────

namespace detail {

inline std::string agent_call(Gateway& gateway, Tag tag, const std::string& user_prompt,
                              const AgentConfig& config) {
    CompletionRequest request{kAgentSystemPrompt, user_prompt, config.temperature,
                              config.max_tokens, tag};
    return gateway.complete(request).text;
}

}  // namespace detail

// One Reflector call; a hard parse failure triggers one stricter-format
// reprompt before surfacing.
inline ModeDiagnosis run_reflector(Gateway& gateway, const std::string& rules,
                                   const ModeContext& ctx,
                                   const std::vector<ErrorMode>& all_modes,
                                   const AgentConfig& config) {
    std::string prompt = build_reflector_prompt(rules, ctx, all_modes);
    std::string reply = detail::agent_call(gateway, Tag::reflect, prompt, config);
    ModeKey mode = ModeKey::cell(ctx.mode);
    try {
        return parse_diagnosis(reply, mode);
    } catch (const Error& e) {
        if (e.code() != Errc::parse) throw;
        std::string stricter = prompt +
                               "\n[FORMAT REMINDER]\nYour previous reply could not be parsed. "
                               "Use exactly the labeled sections listed above.\n";
        return parse_diagnosis(detail::agent_call(gateway, Tag::reflect, stricter, config), mode);
    }
}

inline ModeDiagnosis run_aggregate_reflector(Gateway& gateway, const std::string& rules,
                                             const std::vector<GradedResponse>& errors,
                                             const ConfusionMatrix& matrix,
                                             const AgentConfig& config) {
    std::string prompt = build_aggregate_reflector_prompt(rules, errors, matrix);
    std::string reply = detail::agent_call(gateway, Tag::reflect, prompt, config);
    ModeKey mode = ModeKey::aggregate();
    try {
        return parse_diagnosis(reply, mode);
    } catch (const Error& e) {
        if (e.code() != Errc::parse) throw;
        std::string stricter = prompt +
                               "\n[FORMAT REMINDER]\nYour previous reply could not be parsed. "
                               "Use exactly the labeled sections listed above.\n";
        return parse_diagnosis(detail::agent_call(gateway, Tag::reflect, stricter, config), mode);
    }
}

inline RulePatch run_refiner(Gateway& gateway, const std::string& rules,
                             const ModeDiagnosis& diagnosis,
                             const std::vector<GradedResponse>& errors,
                             const std::vector<ModeKey>& other_modes, EditBudget budget,
                             const AgentConfig& config) {
    std::string prompt = build_refiner_prompt(rules, diagnosis, errors, other_modes, budget);
    std::string reply = detail::agent_call(gateway, Tag::refine, prompt, config);
    try {
        return parse_rule_patch(reply, diagnosis.mode, budget);
    } catch (const Error& e) {
        if (e.code() != Errc::parse) throw;
        std::string stricter = prompt +
                               "\n[FORMAT REMINDER]\nYour previous reply could not be parsed. "
                               "Output the rules as a numbered list, one rule per line.\n";
        return parse_rule_patch(detail::agent_call(gateway, Tag::refine, stricter, config),
                                diagnosis.mode, budget);
    }
}

// Phase-2 consolidation: one call seeded with the deterministic priority
// skeleton. Returns nullopt (and logs) when the output stays unparseable
// after the reprompt — the round then proceeds on per-mode patches only.
inline std::optional<RulePatch> consolidate(Gateway& gateway,
                                            const std::vector<RulePatch>& patches,
                                            const ConfusionMatrix& matrix,
                                            const std::string& rules, const AgentConfig& config) {
    if (patches.empty()) throw Error(Errc::invalid_input, "consolidate with no patches");
    for (const auto& p : patches) {
        if (!p.mode.is_cell())
            throw Error(Errc::invalid_input, "consolidate expects per-mode patches");
        if (!matrix.scale.valid_label(p.mode.true_class) ||
            !matrix.scale.valid_label(p.mode.predicted_class))
            throw Error(Errc::invalid_input, "patch mode not present in matrix");
    }

    auto ordered = detail::order_by_dominance(patches, matrix);
    int max_total = 0;
    for (const auto& p : ordered) max_total += budget_max_rules(p.budget);

    std::string prompt = build_consolidation_prompt(rules, ordered, matrix);
    std::string reply = detail::agent_call(gateway, Tag::consolidate, prompt, config);
    try {
        return parse_consolidated(reply, static_cast<int>(ordered.size()), max_total);
    } catch (const Error& e) {
        if (e.code() != Errc::parse) throw;
    }
    std::string stricter = prompt +
                           "\n[FORMAT REMINDER]\nYour previous reply could not be parsed. Use "
                           "'Priority N:' headings with '-' bullet rules and a 'Conflict "
                           "Resolution:' section.\n";
    try {
        return parse_consolidated(detail::agent_call(gateway, Tag::consolidate, stricter, config),
                                  static_cast<int>(ordered.size()), max_total);
    } catch (const Error& e) {
        if (e.code() != Errc::parse) throw;
        log_warn("consolidation skipped for this round: " + std::string(e.what()));
        return std::nullopt;
    }
}

// ─── Rendering patches into a rules section ──────────────────────────

inline std::string render_patch_subsection(const RulePatch& patch) {
    std::string out = "## Fixes for mode " + patch.mode.label() + "\n";
    for (const auto& rule : patch.rules) out += "- " + rule + "\n";
    return out;
}

inline std::string render_consolidated_rules(const RulePatch& patch) {
    std::string out;
    int current = 0;
    for (std::size_t i = 0; i < patch.rules.size(); ++i) {
        int p = i < patch.rule_priorities.size() ? patch.rule_priorities[i] : 1;
        if (p != current) {
            current = p;
            out += "Priority " + std::to_string(p) + (p == 1 ? " (CHECK FIRST):\n" : ":\n");
        }
        out += "- " + patch.rules[i] + "\n";
    }
    if (!patch.tie_breakers.empty()) {
        out += "Conflict Resolution:\n";
        for (const auto& t : patch.tie_breakers) out += "- " + t + "\n";
    }
    return out;
}

}  // namespace caro
