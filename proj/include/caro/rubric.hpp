#pragma once

#include <map>
#include <optional>
#include <string>

#include "caro/confusion.hpp"
#include "caro/metrics.hpp"

namespace caro {

// The mutable "Rules" block of a rubric prompt is delimited by these
// sentinel lines. A rubric must contain exactly one such block.
inline constexpr const char* kRulesOpen = "[RULES]";
inline constexpr const char* kRulesClose = "[/RULES]";

// A full grading prompt plus lineage: which candidate it was derived
// from, which patch produced it, and which confusion mode that patch
// targeted. Evaluation results are cached per dataset key.
struct RubricCandidate {
    std::string id;
    std::string prompt_text;
    std::string parent_id;
    std::string patch_id;
    std::optional<ModeKey> target_mode;
    std::map<std::string, MetricReport> cached;

    static RubricCandidate root(std::string prompt_text) {
        RubricCandidate c;
        c.id = "P0";
        c.prompt_text = std::move(prompt_text);
        validate_rubric_text(c.prompt_text);
        return c;
    }

    static void validate_rubric_text(const std::string& text) {
        find_rules_span(text);
    }

    // Byte range of the rules content (exclusive of the sentinels).
    static std::pair<std::size_t, std::size_t> find_rules_span(const std::string& text) {
        std::size_t open = text.find(kRulesOpen);
        if (open == std::string::npos)
            throw Error(Errc::invalid_input, std::string("rubric has no ") + kRulesOpen + " block");
        std::size_t content = open + std::string(kRulesOpen).size();
        std::size_t close = text.find(kRulesClose, content);
        if (close == std::string::npos)
            throw Error(Errc::invalid_input, std::string("rubric has an unterminated ") + kRulesOpen + " block");
        if (text.find(kRulesOpen, content) < close ||
            text.find(kRulesClose, close + std::string(kRulesClose).size()) != std::string::npos ||
            text.find(kRulesOpen, close) != std::string::npos)
            throw Error(Errc::invalid_input, "rubric must contain exactly one rules block");
        return {content, close};
    }

    std::string rules_section() const {
        auto [begin, end] = find_rules_span(prompt_text);
        std::string inner = prompt_text.substr(begin, end - begin);
        // Drop the newlines that hug the sentinels.
        if (!inner.empty() && inner.front() == '\n') inner.erase(inner.begin());
        if (!inner.empty() && inner.back() == '\n') inner.pop_back();
        return inner;
    }

    void set_rules_section(const std::string& rules) {
        auto [begin, end] = find_rules_span(prompt_text);
        prompt_text = prompt_text.substr(0, begin) + "\n" + rules + "\n" + prompt_text.substr(end);
    }
};

}  // namespace caro
