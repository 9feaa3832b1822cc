#pragma once

#include <atomic>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "caro/confusion.hpp"
#include "caro/gateway.hpp"
#include "caro/metrics.hpp"
#include "caro/rubric.hpp"

namespace caro {

// ─── Configuration ───────────────────────────────────────────────────

// How the class distribution behind each prediction is obtained. Chat
// APIs do not expose per-class likelihoods, so either the model
// self-reports a confidence line that we renormalize, or we fall back
// to a near-one-hot distribution at the parsed score.
enum class ProbabilityMode { self_report, one_hot };

inline const char* probability_mode_name(ProbabilityMode m) {
    return m == ProbabilityMode::self_report ? "self_report" : "one_hot";
}

struct GraderConfig {
    double temperature = 0.0;  // grading is always deterministic
    std::string score_pattern = R"(score[^\d]{0,12}(\d+))";
    int num_classes = 3;
    ProbabilityMode probability_mode = ProbabilityMode::self_report;
    int max_tokens = 512;
    // Abort a batch when more than this fraction of items fail to parse.
    double max_failure_rate = 0.20;
};

// ─── Prompt template ─────────────────────────────────────────────────

inline constexpr const char* kGradingPromptVersion = "grading-prompt/v1";
inline constexpr const char* kGradingSystemPrompt =
    "You are a careful grading assistant. Apply the rubric exactly as written and grade the "
    "response.";

inline std::string render_grading_prompt(const std::string& rubric_text,
                                         const std::string& response_text, int num_classes,
                                         ProbabilityMode mode) {
    std::string max_label = std::to_string(num_classes - 1);
    std::string out = rubric_text;
    out += "\n\n[RESPONSE]\n" + response_text + "\n";
    out += "\n[OUTPUT FORMAT]\nReply with exactly these lines:\n";
    out += "Reasoning: <brief justification citing the rubric>\n";
    if (mode == ProbabilityMode::self_report)
        out += "Confidence: <comma-separated probabilities for scores 0.." + max_label + ">\n";
    out += "Score: <integer between 0 and " + max_label + ">\n";
    return out;
}

inline constexpr const char* kRepromptInstruction =
    "Your previous reply could not be parsed. Reply with 'Score: <n>' only.";

// ─── Parsing ─────────────────────────────────────────────────────────

struct ParsedScore {
    int score = 0;
    std::string reasoning;
};

// Models often discuss several scores before concluding, so the last
// pattern match wins; an out-of-range final value is a parse failure,
// not a clamp.
inline ParsedScore parse_score(const std::string& text, int num_classes,
                               const std::string& pattern = R"(score[^\d]{0,12}(\d+))") {
    std::regex re(pattern, std::regex::icase);
    auto begin = std::sregex_iterator(text.begin(), text.end(), re);
    auto end = std::sregex_iterator();
    std::optional<std::smatch> last;
    for (auto it = begin; it != end; ++it) last = *it;
    if (!last) throw Error(Errc::parse, "no score found in completion");
    long value;
    try {
        value = std::stol((*last)[1].str());
    } catch (const std::exception&) {
        throw Error(Errc::parse, "score value out of integer range");
    }
    if (value >= num_classes)
        throw Error(Errc::parse, "score " + std::to_string(value) + " outside 0.." +
                                     std::to_string(num_classes - 1));

    // Reasoning is the completion minus the line the score sits on.
    std::size_t match_pos = static_cast<std::size_t>(last->position(0));
    std::size_t line_begin = text.rfind('\n', match_pos);
    line_begin = line_begin == std::string::npos ? 0 : line_begin + 1;
    std::size_t line_end = text.find('\n', match_pos);
    std::string reasoning = text.substr(0, line_begin);
    if (line_end != std::string::npos) reasoning += text.substr(line_end + 1);
    return ParsedScore{static_cast<int>(value), trim(reasoning)};
}

// "Confidence: 0.1, 0.7, 0.2" -> distribution; nullopt when the line is
// missing or does not carry exactly K values.
inline std::optional<ClassDistribution> parse_confidence_line(const std::string& text,
                                                              int num_classes) {
    std::regex line_re(R"(confidence\s*[:=]\s*([0-9eE+\-\.,\s]+))", std::regex::icase);
    auto begin = std::sregex_iterator(text.begin(), text.end(), line_re);
    auto end = std::sregex_iterator();
    std::optional<std::smatch> last;
    for (auto it = begin; it != end; ++it) last = *it;
    if (!last) return std::nullopt;
    std::vector<double> values;
    std::string payload = (*last)[1].str();
    std::string token;
    std::stringstream ss(payload);
    while (std::getline(ss, token, ',')) {
        token = trim(token);
        if (token.empty()) continue;
        try {
            values.push_back(std::stod(token));
        } catch (...) {
            return std::nullopt;
        }
    }
    if (static_cast<int>(values.size()) != num_classes) return std::nullopt;
    return ClassDistribution(std::move(values));
}

inline std::string strip_reasoning_label(const std::string& reasoning) {
    static const std::regex label_re(R"(^\s*reasoning\s*[:\-]\s*)", std::regex::icase);
    return trim(std::regex_replace(reasoning, label_re, ""));
}

inline std::string strip_confidence_line(const std::string& reasoning) {
    std::vector<std::string> kept;
    for (auto& line : split_lines(reasoning)) {
        if (std::regex_search(line, std::regex(R"(^\s*confidence\s*[:=])", std::regex::icase)))
            continue;
        kept.push_back(line);
    }
    return trim(join(kept, "\n"));
}

// ─── Grading ─────────────────────────────────────────────────────────

// The parsed score always wins: when the self-reported distribution
// disagrees, its peak is swapped onto the parsed score so the stored
// prediction and distribution argmax never diverge.
inline ClassDistribution build_distribution(const std::string& completion, int score,
                                            const GraderConfig& config) {
    if (config.probability_mode == ProbabilityMode::self_report) {
        if (auto dist = parse_confidence_line(completion, config.num_classes)) {
            dist->renormalize();
            int peak = dist->argmax();
            if (peak != score)
                std::swap(dist->probs[static_cast<std::size_t>(peak)],
                          dist->probs[static_cast<std::size_t>(score)]);
            return *dist;
        }
    }
    return ClassDistribution::one_hot(config.num_classes, score);
}

// One completion per response, plus at most one stricter-format retry on
// a parse failure. The raw completion text travels with the error.
inline GradedResponse grade(Gateway& gateway, const RubricCandidate& rubric,
                            const std::string& response_id, const std::string& response_text,
                            std::optional<int> true_label, const GraderConfig& config) {
    if (response_text.empty())
        throw Error(Errc::invalid_input, "empty response text for " + response_id);
    if (config.temperature != 0.0)
        throw Error(Errc::config, "grader temperature must be 0");

    std::string user_prompt = render_grading_prompt(rubric.prompt_text, response_text,
                                                    config.num_classes, config.probability_mode);
    CompletionRequest request{kGradingSystemPrompt, user_prompt, 0.0, config.max_tokens,
                              Tag::grade};

    std::string completion;
    ParsedScore parsed;
    try {
        completion = gateway.complete(request).text;
        parsed = parse_score(completion, config.num_classes, config.score_pattern);
    } catch (const Error& first) {
        if (first.code() != Errc::parse) throw;
        request.user_prompt = user_prompt + "\n\n" + kRepromptInstruction;
        std::string retry_completion = gateway.complete(request).text;
        try {
            parsed = parse_score(retry_completion, config.num_classes, config.score_pattern);
            completion = retry_completion;
        } catch (const Error&) {
            throw Error(Errc::parse, "ungradable completion for " + response_id +
                                         " after retry; last completion: " + retry_completion);
        }
    }

    GradedResponse graded;
    graded.response_id = response_id;
    graded.response_text = response_text;
    graded.true_label = true_label;
    graded.distribution = build_distribution(completion, parsed.score, config);
    graded.predicted_label = parsed.score;
    graded.reasoning = strip_confidence_line(strip_reasoning_label(parsed.reasoning));
    if (true_label)
        graded.misconfidence = misconfidence(graded.distribution, parsed.score, *true_label);
    return graded;
}

// ─── Batch evaluation ────────────────────────────────────────────────

struct EvaluationResult {
    std::vector<GradedResponse> graded;  // canonical order: response_id ascending
    ConfusionMatrix matrix;
    MetricReport report;
    int parse_failures = 0;
    std::vector<std::string> failed_ids;

    EvaluationResult() : matrix(ScoreScale(2)) {}
};

namespace detail {

// Fan a per-item job out over worker threads, bounded by the gateway's
// in-flight limit. Results land in index-stable slots, so concurrency
// never changes the outcome.
template <typename Fn>
inline void parallel_for_items(std::size_t n, int max_workers, Fn&& fn) {
    int workers = static_cast<int>(std::min<std::size_t>(
        {n, static_cast<std::size_t>(max_workers),
         std::max(1u, std::thread::hardware_concurrency())}));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace detail

inline std::vector<GradedResponse> grade_batch(Gateway& gateway, const RubricCandidate& rubric,
                                               const std::vector<ResponseItem>& batch,
                                               const GraderConfig& config,
                                               std::vector<std::string>* failed_ids = nullptr) {
    std::vector<std::optional<GradedResponse>> slots(batch.size());
    std::vector<std::string> parse_failed(batch.size());
    std::vector<std::string> fatal(batch.size());

    detail::parallel_for_items(batch.size(), gateway.options().max_in_flight, [&](std::size_t i) {
        const auto& item = batch[i];
        try {
            slots[i] = grade(gateway, rubric, item.id, item.text, item.label, config);
        } catch (const Error& e) {
            if (e.code() == Errc::parse)
                parse_failed[i] = item.id;
            else
                fatal[i] = e.what();
        } catch (const std::exception& e) {
            fatal[i] = e.what();
        }
    });

    for (const auto& f : fatal)
        if (!f.empty()) throw Error(Errc::runtime, "grading aborted: " + f);

    std::size_t failures = 0;
    std::vector<GradedResponse> graded;
    graded.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (slots[i]) {
            graded.push_back(std::move(*slots[i]));
        } else {
            ++failures;
            if (failed_ids) failed_ids->push_back(parse_failed[i]);
        }
    }
    if (!batch.empty() &&
        static_cast<double>(failures) / static_cast<double>(batch.size()) >
            config.max_failure_rate) {
        throw Error(Errc::runtime,
                    "batch aborted: " + std::to_string(failures) + "/" +
                        std::to_string(batch.size()) + " items failed to parse");
    }
    std::sort(graded.begin(), graded.end(), [](const GradedResponse& a, const GradedResponse& b) {
        return a.response_id < b.response_id;
    });
    return graded;
}

inline EvaluationResult evaluate_candidate(Gateway& gateway, const RubricCandidate& rubric,
                                           const std::vector<ResponseItem>& batch,
                                           const ScoreScale& scale, const GraderConfig& config) {
    if (batch.empty()) throw Error(Errc::invalid_input, "evaluate_candidate on empty batch");
    for (const auto& item : batch) {
        if (!item.label)
            throw Error(Errc::invalid_input, "item " + item.id + " has no label");
        if (!scale.valid_label(*item.label))
            throw Error(Errc::invalid_input, "item " + item.id + " has label outside the scale");
    }
    EvaluationResult result;
    result.graded = grade_batch(gateway, rubric, batch, config, &result.failed_ids);
    result.parse_failures = static_cast<int>(result.failed_ids.size());
    result.matrix = build_confusion(result.graded, scale);
    result.report = metric_report(result.matrix);
    return result;
}

}  // namespace caro
