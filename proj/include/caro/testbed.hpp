#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "caro/dataset.hpp"
#include "caro/gateway.hpp"
#include "caro/grader.hpp"
#include "caro/rubric.hpp"

namespace caro {

// ─── Scenario model ──────────────────────────────────────────────────
//
// A scenario is a deterministic stand-in for the grading model and the
// optimizer agents: a rule-sensitive pseudo-grader (behavior table keyed
// on which trigger phrases appear in the rubric rules) plus scripted
// Reflector diagnoses per confusion mode. Refiner and Consolidator
// replies are synthesized from the prompts themselves, so the script
// stays total over everything the optimizer can ask.

struct BehaviorRow {
    std::vector<std::string> present;  // rule keys that must appear
    std::vector<std::string> absent;   // rule keys that must not appear
    int predict = 0;
    double confidence = 0.8;
    std::string reasoning;
};

struct ScriptedReflection {
    std::string root_cause;
    std::vector<std::string> patterns;
    std::string boundary;
    std::vector<std::string> fixes;
    std::string safety;
};

struct Scenario {
    std::string name;
    std::string description;
    ScoreScale scale;
    std::string initial_rubric;
    std::vector<std::string> rule_keys;
    std::map<std::string, std::vector<BehaviorRow>> groups;
    std::vector<ResponseItem> items;
    std::map<std::string, std::string> item_group;               // id -> group
    std::map<std::string, ScriptedReflection> reflections;       // "i -> j" or "AGGREGATE:i -> j"

    Scenario() : scale(2) {}

    Dataset dataset() const {
        Dataset ds;
        ds.items = items;
        ds.scale = scale;
        ds.provenance = "scenario:" + name;
        return ds;
    }

    std::vector<std::string> keys_present(const std::string& rules_text) const {
        std::vector<std::string> found;
        for (const auto& key : rule_keys)
            if (contains(to_lower(rules_text), to_lower(key))) found.push_back(key);
        return found;
    }

    const BehaviorRow& behavior_row(const std::string& group,
                                    const std::vector<std::string>& keys) const {
        auto it = groups.find(group);
        if (it == groups.end())
            throw Error(Errc::config, "scenario " + name + " has no group " + group);
        std::set<std::string> key_set(keys.begin(), keys.end());
        for (const auto& row : it->second) {
            bool ok = true;
            for (const auto& need : row.present)
                if (!key_set.count(need)) { ok = false; break; }
            if (ok)
                for (const auto& ban : row.absent)
                    if (key_set.count(ban)) { ok = false; break; }
            if (ok) return row;
        }
        throw Error(Errc::config, "scenario " + name + ": behavior table for group " + group +
                                      " is not total");
    }

    // The deterministic grading oracle: what this scenario's grader
    // predicts for an item under the given rubric rules.
    struct BehaviorResult {
        int predicted = 0;
        double confidence = 0.8;
        std::string reasoning;
    };

    BehaviorResult behavior_grade(const std::string& rules_text, const ResponseItem& item) const {
        auto group_it = item_group.find(item.id);
        if (group_it == item_group.end())
            throw Error(Errc::config, "scenario " + name + " has no item " + item.id);
        const BehaviorRow& row = behavior_row(group_it->second, keys_present(rules_text));
        BehaviorResult result;
        result.predicted = row.predict;
        result.confidence = row.confidence;
        result.reasoning = row.reasoning.empty()
                               ? "The response matches the rubric criteria for score " +
                                     std::to_string(row.predict) + "."
                               : row.reasoning;
        return result;
    }

    std::string grade_completion(const std::string& rules_text, const ResponseItem& item) const {
        BehaviorResult r = behavior_grade(rules_text, item);
        std::string out = "Reasoning: " + r.reasoning + "\nConfidence: ";
        int k = scale.num_classes;
        for (int c = 0; c < k; ++c) {
            double p = c == r.predicted ? r.confidence : (1.0 - r.confidence) / (k - 1);
            out += format_double(p, 4);
            if (c + 1 < k) out += ",";
        }
        out += "\nScore: " + std::to_string(r.predicted) + "\n";
        return out;
    }
};

// ─── Scenario loading ────────────────────────────────────────────────

inline Scenario load_scenario_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::invalid_input, "cannot open scenario: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::invalid_input, "invalid scenario JSON: " + path.string());

    Scenario s;
    s.name = j.at("name").get<std::string>();
    s.description = j.value("description", "");
    s.scale = ScoreScale(j.at("num_classes").get<int>());
    s.initial_rubric = j.at("initial_rubric").get<std::string>();
    RubricCandidate::validate_rubric_text(s.initial_rubric);
    for (const auto& key : j.value("rule_keys", nlohmann::json::array()))
        s.rule_keys.push_back(key.get<std::string>());

    for (const auto& [group, rows] : j.at("groups").items()) {
        std::vector<BehaviorRow> parsed;
        for (const auto& row : rows) {
            BehaviorRow b;
            for (const auto& x : row.value("present", nlohmann::json::array()))
                b.present.push_back(x.get<std::string>());
            for (const auto& x : row.value("absent", nlohmann::json::array()))
                b.absent.push_back(x.get<std::string>());
            b.predict = row.at("predict").get<int>();
            b.confidence = row.value("confidence", 0.8);
            b.reasoning = row.value("reasoning", "");
            if (!s.scale.valid_label(b.predict))
                throw Error(Errc::invalid_input,
                            "scenario " + s.name + ": behavior prediction outside the scale");
            parsed.push_back(std::move(b));
        }
        if (parsed.empty() || !parsed.back().present.empty() || !parsed.back().absent.empty())
            throw Error(Errc::invalid_input, "scenario " + s.name + ": group " + group +
                                                 " needs an unconditional final behavior row");
        s.groups[group] = std::move(parsed);
    }

    for (const auto& item : j.at("items")) {
        ResponseItem r;
        r.id = item.at("id").get<std::string>();
        r.text = item.at("text").get<std::string>();
        r.label = item.at("label").get<int>();
        std::string group = item.at("group").get<std::string>();
        if (!s.groups.count(group))
            throw Error(Errc::invalid_input,
                        "scenario " + s.name + ": item " + r.id + " references unknown group");
        if (!s.scale.valid_label(*r.label))
            throw Error(Errc::invalid_input,
                        "scenario " + s.name + ": item " + r.id + " label outside the scale");
        s.item_group[r.id] = group;
        s.items.push_back(std::move(r));
    }

    const nlohmann::json reflections = j.value("reflections", nlohmann::json::object());
    for (const auto& [mode, refl] : reflections.items()) {
        ScriptedReflection r;
        r.root_cause = refl.at("root_cause").get<std::string>();
        for (const auto& p : refl.value("patterns", nlohmann::json::array()))
            r.patterns.push_back(p.get<std::string>());
        r.boundary = refl.value("boundary", "");
        for (const auto& f : refl.at("fixes")) r.fixes.push_back(f.get<std::string>());
        r.safety = refl.value("safety", "");
        s.reflections[mode] = std::move(r);
    }
    return s;
}

inline Scenario load_scenario(const std::string& name, const std::filesystem::path& dir) {
    auto path = dir / (name + ".json");
    if (!std::filesystem::exists(path))
        throw Error(Errc::invalid_input, "unknown scenario '" + name + "' (no " + path.string() + ")");
    Scenario s = load_scenario_file(path);
    if (s.name != name)
        throw Error(Errc::invalid_input, "scenario file " + path.string() + " declares name '" +
                                             s.name + "'");
    return s;
}

inline std::vector<std::string> list_scenarios(const std::filesystem::path& dir) {
    std::vector<std::string> names;
    if (!std::filesystem::is_directory(dir)) return names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

// ─── Scripted provider ───────────────────────────────────────────────

// Grade-tagged prompts are answered from the behavior table; agent
// prompts get deterministic scripted or synthesized replies. Anything
// the script cannot answer is a hard error, never a guess.
class TestbedProvider : public Provider {
public:
    explicit TestbedProvider(Scenario scenario) : scenario_(std::move(scenario)) {
        for (std::size_t i = 0; i < scenario_.items.size(); ++i) {
            if (!by_text_.emplace(scenario_.items[i].text, i).second)
                throw Error(Errc::invalid_input,
                            "scenario " + scenario_.name + " has duplicate item texts");
        }
    }

    const Scenario& scenario() const { return scenario_; }

    ProviderReply complete(const CompletionRequest& request,
                           const std::string& fingerprint) override {
        std::string text;
        switch (request.tag) {
            case Tag::grade: text = answer_grade(request.user_prompt, fingerprint); break;
            case Tag::reflect: text = answer_reflect(request.user_prompt, fingerprint); break;
            case Tag::refine: text = answer_refine(request.user_prompt, fingerprint); break;
            case Tag::consolidate: text = answer_consolidate(request.user_prompt); break;
        }
        return ProviderReply{text, MockProvider::estimate_tokens(request),
                             MockProvider::estimate_tokens(text)};
    }

    std::string id() const override { return "testbed:" + scenario_.name; }

private:
    std::string answer_grade(const std::string& prompt, const std::string& fingerprint) const {
        static const std::string open = "[RESPONSE]\n";
        static const std::string close = "\n\n[OUTPUT FORMAT]";
        auto begin = prompt.find(open);
        auto end = prompt.find(close, begin == std::string::npos ? 0 : begin);
        if (begin == std::string::npos || end == std::string::npos)
            throw Error(Errc::config, "testbed cannot locate the response section (fingerprint=" +
                                          fingerprint + ")");
        std::string response_text = prompt.substr(begin + open.size(), end - begin - open.size());
        auto it = by_text_.find(response_text);
        if (it == by_text_.end())
            throw Error(Errc::config,
                        "testbed: graded response is not a scenario item (fingerprint=" +
                            fingerprint + ")");
        // Key detection looks only at the rubric part, ahead of the
        // response section.
        std::string rubric_part = prompt.substr(0, begin);
        return scenario_.grade_completion(rubric_part, scenario_.items[it->second]);
    }

    std::string answer_reflect(const std::string& prompt, const std::string& fingerprint) const {
        static const std::regex focused_re(R"(Analyze WHY the (\d+) -> (\d+) confusion occurs)");
        std::smatch m;
        std::string key;
        bool aggregate = false;
        if (std::regex_search(prompt, m, focused_re)) {
            key = m[1].str() + " -> " + m[2].str();
        } else {
            aggregate = true;
            static const std::regex dominant_re(R"(Error Distribution:\n- (\d+) -> (\d+):)");
            if (!std::regex_search(prompt, m, dominant_re))
                throw Error(Errc::config,
                            "testbed: reflector prompt has no recognizable mode (fingerprint=" +
                                fingerprint + ")");
            key = "AGGREGATE:" + m[1].str() + " -> " + m[2].str();
        }
        auto it = scenario_.reflections.find(key);
        if (it == scenario_.reflections.end())
            throw Error(Errc::config, "scenario " + scenario_.name +
                                          " has no scripted reflection for '" + key +
                                          "' (fingerprint=" + fingerprint + ")");
        const auto& r = it->second;
        std::string out = "Root Cause:\n" + r.root_cause + "\n\nMisleading Patterns:\n";
        for (const auto& p : r.patterns) out += "- " + p + "\n";
        if (!aggregate && !r.boundary.empty()) {
            out += "\nWhy These Are " + key.substr(0, key.find(' ')) + ", Not " +
                   key.substr(key.rfind(' ') + 1) + ":\n" + r.boundary + "\n";
        }
        out += "\nProposed Rule Fix:\n";
        for (std::size_t i = 0; i < r.fixes.size(); ++i)
            out += std::to_string(i + 1) + ". " + r.fixes[i] + "\n";
        if (!r.safety.empty()) out += "\nSafety Check:\n" + r.safety + "\n";
        return out;
    }

    // The scripted Refiner turns the diagnosis embedded in the prompt
    // into an enumerated rule list verbatim.
    std::string answer_refine(const std::string& prompt, const std::string& fingerprint) const {
        static const std::string label = "Proposed Rule Fix: ";
        for (const auto& line : split_lines(prompt)) {
            if (line.rfind(label, 0) != 0) continue;
            std::string payload = line.substr(label.size());
            std::vector<std::string> fixes;
            std::size_t start = 0;
            while (start <= payload.size()) {
                auto sep = payload.find("; ", start);
                if (sep == std::string::npos) {
                    fixes.push_back(payload.substr(start));
                    break;
                }
                fixes.push_back(payload.substr(start, sep - start));
                start = sep + 2;
            }
            std::string out;
            for (std::size_t i = 0; i < fixes.size(); ++i)
                out += std::to_string(i + 1) + ". " + trim(fixes[i]) + "\n";
            return out;
        }
        throw Error(Errc::config,
                    "testbed: refiner prompt carries no diagnosis (fingerprint=" + fingerprint + ")");
    }

    // The scripted Consolidator keeps up to two detailed rules for the
    // dominant patch, one guard per secondary patch, and carries forward
    // current rules whose trigger keys would otherwise be lost.
    std::string answer_consolidate(const std::string& prompt) const {
        static const std::regex header_re(R"(^Priority (\d+): mode .* \((\d+) errors\)$)");
        static const std::regex rule_re(R"(^(\d+)\. (.*)$)");

        std::vector<std::vector<std::string>> patch_rules;
        bool in_patches = false;
        std::string current_rules_block;
        bool in_current = false;
        for (const auto& line : split_lines(prompt)) {
            if (line == "[CURRENT RULES]") { in_current = true; continue; }
            if (line == "[PER-MODE PATCHES]") { in_current = false; in_patches = true; continue; }
            if (!line.empty() && line.front() == '[') { in_current = false; in_patches = false; continue; }
            if (in_current) current_rules_block += line + "\n";
            if (!in_patches) continue;
            std::smatch m;
            if (std::regex_match(line, m, header_re)) {
                patch_rules.emplace_back();
            } else if (!patch_rules.empty() && std::regex_match(line, m, rule_re)) {
                patch_rules.back().push_back(m[2].str());
            }
        }
        if (patch_rules.empty())
            throw Error(Errc::config, "testbed: consolidation prompt lists no patches");

        int cap = 3 * static_cast<int>(patch_rules.size());
        std::vector<std::pair<int, std::string>> out_rules;  // (priority, rule)
        for (std::size_t p = 0; p < patch_rules.size(); ++p) {
            std::size_t keep = p == 0 ? 2 : 1;
            for (std::size_t r = 0; r < patch_rules[p].size() && r < keep; ++r)
                out_rules.emplace_back(static_cast<int>(p) + 1, patch_rules[p][r]);
        }

        // Carry forward existing rules whose trigger keys are not already
        // covered by the new patches.
        std::string new_rules_text;
        for (const auto& [prio, rule] : out_rules) new_rules_text += rule + "\n";
        int next_priority = static_cast<int>(patch_rules.size()) + 1;
        std::set<std::string> carried_keys;
        for (const auto& line : split_lines(current_rules_block)) {
            if (static_cast<int>(out_rules.size()) >= cap) break;
            std::string lowered = to_lower(line);
            for (const auto& key : scenario_.rule_keys) {
                std::string k = to_lower(key);
                if (!contains(lowered, k)) continue;
                if (contains(to_lower(new_rules_text), k) || carried_keys.count(k)) continue;
                std::string cleaned = trim(line);
                while (!cleaned.empty() && (cleaned.front() == '-' || cleaned.front() == '*'))
                    cleaned = trim(cleaned.substr(1));
                out_rules.emplace_back(next_priority++, cleaned);
                carried_keys.insert(k);
                break;
            }
        }

        std::string out;
        int current = 0;
        for (const auto& [prio, rule] : out_rules) {
            if (prio != current) {
                current = prio;
                out += "Priority " + std::to_string(prio) +
                       (prio == 1 ? ": dominant mode guard (CHECK FIRST)\n" : ": guard\n");
            }
            out += "- " + rule + "\n";
        }
        if (current > 1) {
            out += "Conflict Resolution:\n";
            out += "- If Priority 1 criteria suggest one score but a lower-priority guard "
                   "suggests another, assign the Priority 1 score unless the response "
                   "explicitly satisfies the lower-priority condition.\n";
        }
        return out;
    }

    Scenario scenario_;
    std::map<std::string, std::size_t> by_text_;
};

// Scenario plus a pre-wired gateway over its scripted provider.
inline std::pair<Scenario, std::shared_ptr<Gateway>> load_scenario_gateway(
    const std::string& name, const std::filesystem::path& dir, GatewayOptions options = {}) {
    Scenario scenario = load_scenario(name, dir);
    auto provider = std::make_shared<TestbedProvider>(scenario);
    auto gateway = std::make_shared<Gateway>(provider, options);
    return {std::move(scenario), std::move(gateway)};
}

}  // namespace caro
