// caro — confusion-aware rubric optimization CLI.
//
// Machine-readable results go to stdout; tables, progress, and
// diagnostics go to stderr. Exit codes: 0 success, 1 runtime abort,
// 2 usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "caro/config.hpp"
#include "caro/dataset.hpp"
#include "caro/embedding.hpp"
#include "caro/gateway.hpp"
#include "caro/grader.hpp"
#include "caro/http_transport.hpp"
#include "caro/openai.hpp"
#include "caro/orchestrator.hpp"
#include "caro/testbed.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string scenario;
    std::string scenario_dir = "scenarios";
    std::string data_path;
    std::string rubric_path;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_data = true) {
    cmd->add_option("--config", args.config_path, "run config file (key = value lines)");
    cmd->add_option("--set", args.overrides, "override a config key (key=value, repeatable)");
    cmd->add_option("--scenario", args.scenario, "use a bundled deterministic scenario");
    cmd->add_option("--scenario-dir", args.scenario_dir, "scenario asset directory");
    if (with_data) {
        cmd->add_option("--data", args.data_path, "dataset file (.jsonl or .csv)");
        cmd->add_option("--rubric", args.rubric_path, "initial rubric prompt file");
    }
    cmd->add_option("--seed", args.seed, "random seed (shorthand for --set seed=N)");
}

caro::RunConfig build_config(const CommonArgs& args) {
    caro::RunConfig config;
    if (!args.config_path.empty()) config = caro::load_config_file(args.config_path);
    for (const auto& assignment : args.overrides) caro::apply_override(config, assignment);
    if (args.seed) config.seed = *args.seed;
    config.validate();
    return config;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw caro::Error(caro::Errc::invalid_input, "cannot read file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Everything an execution needs: dataset, rubric, providers.
struct Session {
    caro::RunConfig config;
    caro::Dataset dataset;
    std::string rubric_text;
    std::shared_ptr<caro::Gateway> gateway;
    std::shared_ptr<caro::EmbeddingProvider> embedder;
    std::optional<caro::Scenario> scenario;
};

Session open_session(const CommonArgs& args, bool need_dataset, bool need_rubric) {
    Session s;
    s.config = build_config(args);

    if (!args.scenario.empty()) {
        auto [scenario, gateway] =
            caro::load_scenario_gateway(args.scenario, args.scenario_dir,
                                        s.config.gateway_options());
        s.scenario = scenario;
        s.gateway = gateway;
        s.config.num_classes = scenario.scale.num_classes;
        s.dataset = args.data_path.empty()
                        ? scenario.dataset()
                        : caro::load_dataset(args.data_path, s.config.num_classes);
        s.rubric_text =
            args.rubric_path.empty() ? scenario.initial_rubric : read_text_file(args.rubric_path);
    } else {
        if (need_dataset) {
            if (args.data_path.empty())
                throw caro::Error(caro::Errc::invalid_input,
                                  "no dataset: pass --data <file> or --scenario <name>");
            if (!fs::exists(args.data_path))
                throw caro::Error(caro::Errc::invalid_input,
                                  "dataset path does not exist: " + args.data_path);
            s.dataset = caro::load_dataset(args.data_path, s.config.num_classes);
        }
        if (need_rubric) {
            if (args.rubric_path.empty())
                throw caro::Error(caro::Errc::invalid_input,
                                  "no rubric: pass --rubric <file> or --scenario <name>");
            s.rubric_text = read_text_file(args.rubric_path);
        }
        if (s.config.provider.endpoint.empty()) {
            const char* env = std::getenv("CARO_API_BASE");
            if (env) s.config.provider.endpoint = env;
        }
        if (s.config.provider.endpoint.empty())
            throw caro::Error(caro::Errc::config,
                              "no provider endpoint: set 'endpoint' in the config, export "
                              "CARO_API_BASE, or use --scenario");
        auto transport = std::make_shared<caro::HttplibTransport>();
        auto provider = std::make_shared<caro::OpenAiProvider>(
            transport, s.config.provider.endpoint, s.config.provider.model,
            s.config.provider.api_key());
        s.gateway = std::make_shared<caro::Gateway>(provider, s.config.gateway_options());
    }

    if (!s.config.provider.embedding_endpoint.empty()) {
        s.embedder = std::make_shared<caro::HttpEmbedder>(
            std::make_shared<caro::HttplibTransport>(), s.config.provider.embedding_endpoint,
            s.config.provider.embedding_model, s.config.provider.api_key());
    } else {
        s.embedder = std::make_shared<caro::OfflineEmbedder>();
    }
    return s;
}

int scale_of(const Session& s) {
    return s.config.num_classes > 0 ? s.config.num_classes : s.dataset.scale.num_classes;
}

// ── optimize ─────────────────────────────────────────────────────────

int cmd_optimize(const CommonArgs& args, std::string out_dir, bool resume) {
    Session s = open_session(args, true, true);
    if (out_dir.empty()) {
        std::string stem = !args.scenario.empty() ? args.scenario
                                                  : fs::path(args.data_path).stem().string();
        out_dir = "runs/" + stem + "-seed" + std::to_string(s.config.seed);
    }

    caro::Orchestrator orchestrator(s.config, s.gateway, s.embedder);
    caro::OptimizationResult result;
    if (resume) {
        s.config = caro::config_from_json(
            json::parse(read_text_file((fs::path(out_dir) / "config.json").string())));
        caro::Orchestrator resumed(s.config, s.gateway, s.embedder);
        result = resumed.resume(s.dataset, out_dir);
    } else {
        result = orchestrator.run(s.dataset, s.rubric_text, out_dir);
    }

    // Persist what drove the run, so inspect/resume know the context.
    json meta{{"scenario", args.scenario},
              {"scenario_dir", args.scenario_dir},
              {"data", args.data_path},
              {"rubric", args.rubric_path}};
    std::ofstream(fs::path(out_dir) / "meta.json") << meta.dump(2) << "\n";

    std::cerr << "round |   acc | kappa | modes | pool\n";
    for (const auto& round : result.rounds) {
        const caro::BeamMemberRecord* best = nullptr;
        for (const auto& e : round.evaluations)
            if (e.candidate_id == round.best_candidate_id) best = &e;
        std::cerr << "  " << round.round << "   | " << (best ? caro::format_double(best->report.accuracy, 3) : "  -  ")
                  << " | " << (best ? caro::format_double(best->report.kappa, 3) : "  -  ")
                  << " |   " << round.modes.size() << "   |  " << round.pool.size() << "\n";
    }

    json out{{"run_dir", out_dir},
             {"best_id", result.best.id},
             {"best_prompt_file", (fs::path(out_dir) / "best_prompt.txt").string()},
             {"rounds", result.rounds.size()},
             {"val_report", caro::records::report_to_json(result.val_report)},
             {"ledger",
              {{"calls", result.ledger.total_calls()},
               {"input_tokens", result.ledger.totals.input_tokens},
               {"output_tokens", result.ledger.totals.output_tokens},
               {"estimated_cost_usd", result.ledger.estimated_cost_usd()}}}};
    if (result.test_report) {
        out["test_report"] = caro::records::report_to_json(*result.test_report);
        out["final_test_accuracy"] = result.test_report->accuracy;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ── evaluate / grade ─────────────────────────────────────────────────

int cmd_evaluate(const CommonArgs& args, const std::string& records_path) {
    Session s = open_session(args, true, true);
    if (!s.dataset.fully_labeled())
        throw caro::Error(caro::Errc::invalid_input,
                          "dataset has unlabeled items; use `caro grade` for inference without "
                          "labels");
    caro::ScoreScale scale(scale_of(s));
    caro::RubricCandidate rubric = caro::RubricCandidate::root(s.rubric_text);
    caro::EvaluationResult eval = caro::evaluate_candidate(
        *s.gateway, rubric, s.dataset.items, scale, s.config.grader_config(scale.num_classes));

    if (!records_path.empty()) {
        std::ofstream out(records_path);
        for (const auto& g : eval.graded) out << caro::records::graded_to_json(g).dump() << "\n";
    }
    json report{{"accuracy", eval.report.accuracy},
                {"kappa", eval.report.kappa},
                {"n", eval.report.n},
                {"parse_failures", eval.parse_failures}};
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_grade(const CommonArgs& args, const std::string& out_path) {
    Session s = open_session(args, true, true);
    caro::ScoreScale scale(scale_of(s));
    caro::RubricCandidate rubric = caro::RubricCandidate::root(s.rubric_text);
    caro::GraderConfig grader_cfg = s.config.grader_config(scale.num_classes);
    caro::InferenceOutcome outcome =
        caro::infer(*s.gateway, rubric, s.dataset.items, scale, grader_cfg);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        out = &file;
    }
    for (const auto& g : outcome.items) *out << caro::records::graded_to_json(g).dump() << "\n";
    if (outcome.parse_failures > 0)
        std::cerr << outcome.parse_failures << " item(s) failed to parse\n";
    return 0;
}

// ── split ────────────────────────────────────────────────────────────

int cmd_split(const CommonArgs& args, const std::string& out_prefix) {
    Session s = open_session(args, true, false);
    caro::DatasetSplit split = caro::split_dataset(s.dataset, s.config.ratios, s.config.seed);
    caro::save_dataset_jsonl(split.train, out_prefix + ".train.jsonl");
    caro::save_dataset_jsonl(split.val, out_prefix + ".val.jsonl");
    caro::save_dataset_jsonl(split.test, out_prefix + ".test.jsonl");
    json out{{"train", split.train.items.size()},
             {"val", split.val.items.size()},
             {"test", split.test.items.size()}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

// ── inspect ──────────────────────────────────────────────────────────

void render_round_matrix(std::ostream& os, const std::vector<std::vector<long>>& counts,
                         const std::vector<caro::ErrorMode>& modes) {
    caro::ConfusionMatrix matrix =
        caro::ConfusionMatrix::from_counts(std::vector<std::vector<long>>(counts));
    const caro::ErrorMode* dominant = modes.empty() ? nullptr : &modes.front();
    os << caro::render_global_summary(matrix, dominant);
}

int cmd_inspect(const std::string& run_dir, bool csv) {
    fs::path dir(run_dir);
    if (!fs::is_directory(dir))
        throw caro::Error(caro::Errc::invalid_input, "not a run directory: " + run_dir);

    std::vector<caro::RoundRecord> rounds;
    if (fs::is_directory(dir / "rounds")) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir / "rounds")) {
            auto name = entry.path().filename().string();
            if (name.rfind("round_", 0) == 0 && entry.path().extension() == ".json")
                files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            rounds.push_back(caro::records::round_from_json(json::parse(read_text_file(f.string()))));
    }
    json result;
    if (fs::exists(dir / "result.json")) result = json::parse(read_text_file((dir / "result.json").string()));

    if (csv) {
        std::cout << "round,accuracy,kappa\n";
        for (const auto& round : rounds) {
            for (const auto& e : round.evaluations) {
                if (e.candidate_id != round.best_candidate_id) continue;
                std::cout << round.round << "," << caro::format_double(e.report.accuracy, 6)
                          << "," << caro::format_double(e.report.kappa, 6) << "\n";
            }
        }
        return 0;
    }

    if (rounds.empty()) {
        std::cout << "Round 0 (validation of the initial prompt)\n";
        if (result.contains("val_matrix")) {
            render_round_matrix(std::cout,
                                result["val_matrix"].get<std::vector<std::vector<long>>>(), {});
        }
    }
    for (const auto& round : rounds) {
        std::cout << "================ Round " << round.round << " ================\n";
        for (const auto& e : round.evaluations) {
            if (e.candidate_id != round.best_candidate_id) continue;
            std::cout << "best candidate: " << e.candidate_id
                      << "  acc=" << caro::format_double(e.report.accuracy, 4)
                      << "  kappa=" << caro::format_double(e.report.kappa, 4) << "\n";
            render_round_matrix(std::cout, e.matrix_counts, round.modes);
        }
        for (const auto& patch : round.patches) {
            std::cout << "patch " << patch.id << " [" << patch.mode.label() << "]\n";
            for (const auto& rule : patch.rules) std::cout << "  - " << rule << "\n";
        }
        if (round.consolidated) {
            std::cout << "consolidated patch " << round.consolidated->id << "\n";
            for (const auto& rule : round.consolidated->rules) std::cout << "  - " << rule << "\n";
        }
        std::cout << "\n";
    }
    if (!result.is_null()) {
        std::cout << "best prompt: " << result.value("best_id", "?") << "\n";
        if (result.contains("test_report")) {
            auto report = caro::records::report_from_json(result["test_report"]);
            std::cout << "test accuracy=" << caro::format_double(report.accuracy, 4)
                      << " kappa=" << caro::format_double(report.kappa, 4) << " n=" << report.n
                      << "\n";
        }
    }
    return 0;
}

// ── scenarios ────────────────────────────────────────────────────────

int cmd_scenarios(const std::string& scenario_dir) {
    for (const auto& name : caro::list_scenarios(scenario_dir)) std::cout << name << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"caro: confusion-aware grading-rubric optimization"};
    app.require_subcommand(1);

    CommonArgs opt_args, eval_args, grade_args, split_args;
    std::string out_dir, records_path = "evaluate_records.jsonl", grade_out,
                split_prefix = "split", run_dir, scenarios_dir = "scenarios";
    bool resume = false, csv = false;

    auto* optimize = app.add_subcommand("optimize", "run the optimization loop");
    add_common(optimize, opt_args);
    optimize->add_option("--out", out_dir, "run directory (default runs/<name>-seed<seed>)");
    optimize->add_flag("--resume", resume, "resume a persisted run directory");

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a rubric on a labeled dataset");
    add_common(evaluate, eval_args);
    evaluate->add_option("--records", records_path,
                         "per-item grading records file (default evaluate_records.jsonl)");

    auto* grade = app.add_subcommand("grade", "grade responses (labels optional)");
    add_common(grade, grade_args);
    grade->add_option("--out", grade_out, "write predictions here instead of stdout");

    auto* split = app.add_subcommand("split", "split a dataset into train/val/test files");
    add_common(split, split_args);
    split->add_option("--out-prefix", split_prefix, "output file prefix");

    auto* inspect = app.add_subcommand("inspect", "render a run directory");
    inspect->add_option("--run", run_dir, "run directory")->required();
    inspect->add_flag("--csv", csv, "emit round,accuracy,kappa rows");

    auto* scenarios = app.add_subcommand("scenarios", "list bundled scenarios");
    scenarios->add_option("--scenario-dir", scenarios_dir, "scenario asset directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (optimize->parsed()) return cmd_optimize(opt_args, out_dir, resume);
        if (evaluate->parsed()) return cmd_evaluate(eval_args, records_path);
        if (grade->parsed()) return cmd_grade(grade_args, grade_out);
        if (split->parsed()) return cmd_split(split_args, split_prefix);
        if (inspect->parsed()) return cmd_inspect(run_dir, csv);
        if (scenarios->parsed()) return cmd_scenarios(scenarios_dir);
    } catch (const caro::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return (e.code() == caro::Errc::config || e.code() == caro::Errc::invalid_input) ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
