#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "caro/dataset.hpp"
#include "caro/gateway.hpp"
#include "caro/grader.hpp"
#include "caro/reflection.hpp"

namespace caro {

struct ProviderSettings {
    std::string endpoint;              // OpenAI-compatible base URL
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "CARO_API_KEY";
    std::string embedding_endpoint;    // empty = offline embeddings
    std::string embedding_model;

    std::string api_key() const {
        const char* v = std::getenv(api_key_env.c_str());
        return v ? v : "";
    }
};

// All knobs of an optimization run. Defaults follow the reference
// operating point: K=4 modes, beam 4, lambda 0.3, 6 rounds, medium edit
// budget, 7:1:2 split.
struct RunConfig {
    int rounds = 6;        // T
    int beam = 4;          // B
    int top_k_modes = 4;   // K
    double lambda = 0.3;   // diversity weight
    EditBudget edit_budget = EditBudget::medium;

    int batch_cap = 32;  // minibatch size
    int anchors = 8;     // top-misconfidence anchors (m)
    int knn = 4;         // neighbors per anchor (k)

    int ucb_chunk_size = 8;
    double ucb_c = 1.0;
    int ucb_budget_chunks = 0;  // 0 = auto (2 chunks per pool candidate)

    SplitRatios ratios;
    std::uint64_t seed = 0;

    int num_classes = 0;  // 0 = infer from data or scenario
    ProbabilityMode probability_mode = ProbabilityMode::self_report;
    std::string score_pattern = R"(score[^\d]{0,12}(\d+))";

    bool baseline_mode = false;  // aggregate-feedback arm
    bool pooled_matrix = false;  // pool beam matrices for mode extraction
    int patience = 0;            // early stop after this many stale rounds (0 = off)
    int rules_word_cap = 2000;
    int error_cap = 8;
    int contrastive_n = 2;
    bool run_test_inference = true;

    double agent_temperature = 0.3;
    int agent_max_tokens = 1024;
    int grade_max_tokens = 512;

    Pricing pricing;
    RetryPolicy retry;
    int max_in_flight = 8;

    ProviderSettings provider;

    void validate() const {
        if (rounds < 0) throw Error(Errc::config, "rounds must be >= 0");
        if (beam < 1) throw Error(Errc::config, "beam must be >= 1");
        if (top_k_modes < 1) throw Error(Errc::config, "top_k_modes must be >= 1");
        if (lambda < 0) throw Error(Errc::config, "lambda must be >= 0");
        if (batch_cap < 1 || anchors < 1 || knn < 1)
            throw Error(Errc::config, "batch_cap, anchors, and knn must be >= 1");
        if (ucb_chunk_size < 1 || ucb_budget_chunks < 0 || ucb_c < 0)
            throw Error(Errc::config, "invalid UCB settings");
        ratios.validate();
    }

    GraderConfig grader_config(int k) const {
        GraderConfig g;
        g.num_classes = k;
        g.probability_mode = probability_mode;
        g.score_pattern = score_pattern;
        g.max_tokens = grade_max_tokens;
        return g;
    }

    AgentConfig agent_config() const { return AgentConfig{agent_temperature, agent_max_tokens}; }

    GatewayOptions gateway_options() const {
        return GatewayOptions{retry, pricing, max_in_flight};
    }
};

// ─── Key-value assignment ────────────────────────────────────────────

inline void apply_config_entry(RunConfig& config, const std::string& key,
                               const std::string& raw_value) {
    const std::string value = trim(raw_value);
    auto as_int = [&] {
        try {
            return std::stoi(value);
        } catch (...) {
            throw Error(Errc::config, "expected an integer for '" + key + "', got '" + value + "'");
        }
    };
    auto as_double = [&] {
        try {
            return std::stod(value);
        } catch (...) {
            throw Error(Errc::config, "expected a number for '" + key + "', got '" + value + "'");
        }
    };
    auto as_bool = [&] {
        std::string v = to_lower(value);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw Error(Errc::config, "expected a boolean for '" + key + "', got '" + value + "'");
    };

    if (key == "rounds" || key == "T") config.rounds = as_int();
    else if (key == "beam" || key == "B") config.beam = as_int();
    else if (key == "top_k_modes" || key == "K") config.top_k_modes = as_int();
    else if (key == "lambda") config.lambda = as_double();
    else if (key == "edit_budget") config.edit_budget = parse_budget(value);
    else if (key == "batch_cap") config.batch_cap = as_int();
    else if (key == "anchors") config.anchors = as_int();
    else if (key == "knn") config.knn = as_int();
    else if (key == "ucb_chunk_size") config.ucb_chunk_size = as_int();
    else if (key == "ucb_c") config.ucb_c = as_double();
    else if (key == "ucb_budget_chunks") config.ucb_budget_chunks = as_int();
    else if (key == "ratio_train") config.ratios.train = as_double();
    else if (key == "ratio_val") config.ratios.val = as_double();
    else if (key == "ratio_test") config.ratios.test = as_double();
    else if (key == "seed") config.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "num_classes") config.num_classes = as_int();
    else if (key == "probability_mode") {
        std::string v = to_lower(value);
        if (v == "self_report") config.probability_mode = ProbabilityMode::self_report;
        else if (v == "one_hot") config.probability_mode = ProbabilityMode::one_hot;
        else throw Error(Errc::config, "unknown probability_mode: " + value);
    }
    else if (key == "score_pattern") config.score_pattern = value;
    else if (key == "baseline_mode") config.baseline_mode = as_bool();
    else if (key == "pooled_matrix") config.pooled_matrix = as_bool();
    else if (key == "patience") config.patience = as_int();
    else if (key == "rules_word_cap") config.rules_word_cap = as_int();
    else if (key == "error_cap") config.error_cap = as_int();
    else if (key == "contrastive_n") config.contrastive_n = as_int();
    else if (key == "run_test_inference") config.run_test_inference = as_bool();
    else if (key == "agent_temperature") config.agent_temperature = as_double();
    else if (key == "agent_max_tokens") config.agent_max_tokens = as_int();
    else if (key == "grade_max_tokens") config.grade_max_tokens = as_int();
    else if (key == "price_input_per_million") config.pricing.input_per_million = as_double();
    else if (key == "price_output_per_million") config.pricing.output_per_million = as_double();
    else if (key == "retry_max") config.retry.max_retries = as_int();
    else if (key == "retry_base_delay_ms") config.retry.base_delay_ms = as_int();
    else if (key == "max_in_flight") config.max_in_flight = as_int();
    else if (key == "endpoint") config.provider.endpoint = value;
    else if (key == "model") config.provider.model = value;
    else if (key == "api_key_env") config.provider.api_key_env = value;
    else if (key == "embedding_endpoint") config.provider.embedding_endpoint = value;
    else if (key == "embedding_model") config.provider.embedding_model = value;
    else throw Error(Errc::config, "unknown config key: " + key);
}

// key = value lines; '#' starts a comment.
inline RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::config, "cannot open config file: " + path.string());
    RunConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string stripped = line.substr(0, line.find('#'));
        if (trim(stripped).empty()) continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw Error(Errc::config,
                        path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        try {
            apply_config_entry(config, trim(stripped.substr(0, eq)), stripped.substr(eq + 1));
        } catch (const Error& e) {
            throw Error(Errc::config,
                        path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return config;
}

// "key=value" override, as taken by the CLI's --set flag.
inline void apply_override(RunConfig& config, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw Error(Errc::config, "override must look like key=value: " + assignment);
    apply_config_entry(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

// ─── JSON snapshot (run directory) ───────────────────────────────────

inline nlohmann::json config_to_json(const RunConfig& c) {
    return nlohmann::json{
        {"rounds", c.rounds},
        {"beam", c.beam},
        {"top_k_modes", c.top_k_modes},
        {"lambda", c.lambda},
        {"edit_budget", budget_name(c.edit_budget)},
        {"batch_cap", c.batch_cap},
        {"anchors", c.anchors},
        {"knn", c.knn},
        {"ucb_chunk_size", c.ucb_chunk_size},
        {"ucb_c", c.ucb_c},
        {"ucb_budget_chunks", c.ucb_budget_chunks},
        {"ratio_train", c.ratios.train},
        {"ratio_val", c.ratios.val},
        {"ratio_test", c.ratios.test},
        {"seed", c.seed},
        {"num_classes", c.num_classes},
        {"probability_mode", probability_mode_name(c.probability_mode)},
        {"score_pattern", c.score_pattern},
        {"baseline_mode", c.baseline_mode},
        {"pooled_matrix", c.pooled_matrix},
        {"patience", c.patience},
        {"rules_word_cap", c.rules_word_cap},
        {"error_cap", c.error_cap},
        {"contrastive_n", c.contrastive_n},
        {"run_test_inference", c.run_test_inference},
        {"agent_temperature", c.agent_temperature},
        {"agent_max_tokens", c.agent_max_tokens},
        {"grade_max_tokens", c.grade_max_tokens},
        {"price_input_per_million", c.pricing.input_per_million},
        {"price_output_per_million", c.pricing.output_per_million},
        {"retry_max", c.retry.max_retries},
        {"retry_base_delay_ms", c.retry.base_delay_ms},
        {"max_in_flight", c.max_in_flight},
        {"endpoint", c.provider.endpoint},
        {"model", c.provider.model},
        {"api_key_env", c.provider.api_key_env},
        {"embedding_endpoint", c.provider.embedding_endpoint},
        {"embedding_model", c.provider.embedding_model},
    };
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    c.rounds = j.value("rounds", c.rounds);
    c.beam = j.value("beam", c.beam);
    c.top_k_modes = j.value("top_k_modes", c.top_k_modes);
    c.lambda = j.value("lambda", c.lambda);
    c.edit_budget = parse_budget(j.value("edit_budget", std::string(budget_name(c.edit_budget))));
    c.batch_cap = j.value("batch_cap", c.batch_cap);
    c.anchors = j.value("anchors", c.anchors);
    c.knn = j.value("knn", c.knn);
    c.ucb_chunk_size = j.value("ucb_chunk_size", c.ucb_chunk_size);
    c.ucb_c = j.value("ucb_c", c.ucb_c);
    c.ucb_budget_chunks = j.value("ucb_budget_chunks", c.ucb_budget_chunks);
    c.ratios.train = j.value("ratio_train", c.ratios.train);
    c.ratios.val = j.value("ratio_val", c.ratios.val);
    c.ratios.test = j.value("ratio_test", c.ratios.test);
    c.seed = j.value("seed", c.seed);
    c.num_classes = j.value("num_classes", c.num_classes);
    std::string pm = j.value("probability_mode", "self_report");
    c.probability_mode = pm == "one_hot" ? ProbabilityMode::one_hot : ProbabilityMode::self_report;
    c.score_pattern = j.value("score_pattern", c.score_pattern);
    c.baseline_mode = j.value("baseline_mode", c.baseline_mode);
    c.pooled_matrix = j.value("pooled_matrix", c.pooled_matrix);
    c.patience = j.value("patience", c.patience);
    c.rules_word_cap = j.value("rules_word_cap", c.rules_word_cap);
    c.error_cap = j.value("error_cap", c.error_cap);
    c.contrastive_n = j.value("contrastive_n", c.contrastive_n);
    c.run_test_inference = j.value("run_test_inference", c.run_test_inference);
    c.agent_temperature = j.value("agent_temperature", c.agent_temperature);
    c.agent_max_tokens = j.value("agent_max_tokens", c.agent_max_tokens);
    c.grade_max_tokens = j.value("grade_max_tokens", c.grade_max_tokens);
    c.pricing.input_per_million = j.value("price_input_per_million", c.pricing.input_per_million);
    c.pricing.output_per_million =
        j.value("price_output_per_million", c.pricing.output_per_million);
    c.retry.max_retries = j.value("retry_max", c.retry.max_retries);
    c.retry.base_delay_ms = j.value("retry_base_delay_ms", c.retry.base_delay_ms);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.provider.endpoint = j.value("endpoint", c.provider.endpoint);
    c.provider.model = j.value("model", c.provider.model);
    c.provider.api_key_env = j.value("api_key_env", c.provider.api_key_env);
    c.provider.embedding_endpoint = j.value("embedding_endpoint", c.provider.embedding_endpoint);
    c.provider.embedding_model = j.value("embedding_model", c.provider.embedding_model);
    return c;
}

}  // namespace caro
