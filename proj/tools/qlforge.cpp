// qlforge command-line driver.
#include "qlforge/error.hpp"
#include "qlforge/fixture.hpp"
#include "qlforge/pipeline.hpp"
#include "qlforge/util.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace qlforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitNothing = 4;

struct LlmFlags {
    std::string mode = "mock";
    std::string script;
    std::string model = "mock";
    std::string endpoint;
    std::string transcript;
};

void add_llm_flags(CLI::App* cmd, LlmFlags& f) {
    cmd->add_option("--llm", f.mode, "language model backend")->check(CLI::IsMember({"live", "mock"}));
    cmd->add_option("--mock-script", f.script, "scripted responses (JSONL) for --llm mock");
    cmd->add_option("--model", f.model, "model name sent to the provider");
    cmd->add_option("--endpoint", f.endpoint, "OpenAI-compatible base URL for --llm live");
    cmd->add_option("--transcript", f.transcript, "append request/response records to this JSONL file");
}

std::unique_ptr<Gateway> make_gateway(const LlmFlags& f) {
    PipelineConfig cfg;
    cfg.llm_mode = f.mode;
    if (!f.script.empty()) {
        cfg.llm_script = f.script;
    }
    cfg.llm_endpoint = f.endpoint;
    auto transcript = f.transcript.empty() ? std::make_shared<TranscriptStore>()
                                           : std::make_shared<TranscriptStore>(fs::path(f.transcript));
    return std::make_unique<Gateway>(std::shared_ptr<LlmClient>(make_llm_client(cfg)), transcript,
                                     ModelSettings{f.model, std::nullopt, 4096});
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) {
        std::cerr << "warning: " << w << "\n";
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"qlforge: LLM-assisted taint specification and CodeQL rule generation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "qlforge 0.1.0");
    std::function<int()> action;

    // extract
    auto* extract = app.add_subcommand("extract", "enumerate API invocations into a spec document");
    std::string ex_project, ex_backend = "fixture", ex_out, ex_filters, ex_codeql, ex_work;
    std::size_t ex_workers = 4;
    extract->add_option("--project", ex_project, "project root")->required();
    extract->add_option("--backend", ex_backend)->check(CLI::IsMember({"codeql", "fixture"}));
    extract->add_option("--out", ex_out, "spec document to write")->required();
    extract->add_option("--filters", ex_filters, "filter rules (json: {deny:[...], allow:[...]})");
    extract->add_option("--codeql", ex_codeql, "codeql executable");
    extract->add_option("--work-dir", ex_work, "scratch directory for the codeql database");
    extract->add_option("--workers", ex_workers)->check(CLI::PositiveNumber);
    extract->callback([&] {
        action = [&] {
            PipelineConfig cfg;
            cfg.backend = ex_backend;
            cfg.codeql = ex_codeql;
            cfg.workers = ex_workers;
            if (!ex_filters.empty()) {
                cfg.filters = ex_filters;
            }
            const auto filters = load_filters(cfg);
            const RunPaths paths{ex_work.empty() ? fs::path(ex_out).parent_path() / "codeql" : fs::path(ex_work)};
            auto backend = make_backend(cfg, paths);
            auto result = extract_apis(ex_project, *backend);
            const auto kept = dedupe(filter_risky(result.records, filters));
            auto doc = to_spec_document(kept);
            print_warnings(result.warnings);
            print_warnings(doc.warnings);
            write_file_atomic(ex_out, doc.text);
            std::cerr << "extract: " << result.records.size() << " call sites, " << kept.size() << " APIs retained\n";
            return kept.empty() ? kExitNothing : kExitOk;
        };
    });

    // classify
    auto* classify = app.add_subcommand("classify", "label APIs by triple voting");
    std::string cl_specs, cl_out;
    ClassifyOptions cl_opts;
    LlmFlags cl_llm;
    classify->add_option("--specs", cl_specs)->required();
    classify->add_option("--budget", cl_opts.budget, "token budget per prompt")->check(CLI::PositiveNumber);
    classify->add_option("--seed", cl_opts.seed);
    classify->add_option("--workers", cl_opts.workers)->check(CLI::PositiveNumber);
    classify->add_option("--out", cl_out)->required();
    add_llm_flags(classify, cl_llm);
    classify->callback([&] {
        action = [&] {
            const auto records = parse_spec_document(read_file(cl_specs));
            if (records.empty()) {
                write_file_atomic(cl_out, serialize_votes({}));
                std::cerr << "classify: no specs to classify\n";
                return kExitNothing;
            }
            auto gateway = make_gateway(cl_llm);
            auto result = classify_all(records, *gateway, cl_opts);
            print_warnings(result.warnings);
            write_file_atomic(cl_out, serialize_votes(result.votes));
            std::cerr << "classify: " << result.votes.size() << " votes\n";
            return kExitOk;
        };
    });

    // pair
    auto* pair = app.add_subcommand("pair", "match sources and sinks into exploit-chain pairs");
    std::string pr_votes, pr_specs, pr_out;
    PairOptions pr_opts;
    LlmFlags pr_llm;
    pair->add_option("--votes", pr_votes)->required();
    pair->add_option("--specs", pr_specs)->required();
    pair->add_option("--out", pr_out)->required();
    pair->add_option("--budget", pr_opts.budget)->check(CLI::PositiveNumber);
    pair->add_option("--workers", pr_opts.workers)->check(CLI::PositiveNumber);
    pair->add_flag("--drop-sanitized", pr_opts.drop_sanitized, "drop pairs whose rationale names a sanitizer");
    add_llm_flags(pair, pr_llm);
    pair->callback([&] {
        action = [&] {
            const auto votes = parse_votes(read_file(pr_votes));
            const auto records = index_records(parse_spec_document(read_file(pr_specs)));
            auto gateway = make_gateway(pr_llm);
            auto result = pair_all(votes, records, *gateway, pr_opts);
            print_warnings(result.warnings);
            print_warnings(result.chunk_failures);
            write_file_atomic(pr_out, serialize_pairs(result.pairs));
            std::cerr << "pair: " << result.pairs.size() << " pairs\n";
            return result.pairs.empty() ? kExitNothing : kExitOk;
        };
    });

    // generate
    auto* generate = app.add_subcommand("generate", "write, compile and repair one rule per pair");
    std::string gn_pairs, gn_specs, gn_out, gn_compiler = "mock", gn_mock, gn_codeql;
    GenerateOptions gn_opts;
    std::int64_t gn_timeout = 120000;
    LlmFlags gn_llm;
    generate->add_option("--pairs", gn_pairs)->required();
    generate->add_option("--specs", gn_specs, "spec document the pairs refer to")->required();
    generate->add_option("--max-iters", gn_opts.rule.max_iters)->check(CLI::PositiveNumber);
    generate->add_option("--compiler", gn_compiler)->check(CLI::IsMember({"codeql", "mock"}));
    generate->add_option("--mock-compiler", gn_mock, "scripted compiler outcomes (json)");
    generate->add_option("--codeql", gn_codeql, "codeql executable");
    generate->add_option("--compile-timeout-ms", gn_timeout)->check(CLI::PositiveNumber);
    generate->add_option("--workers", gn_opts.workers)->check(CLI::PositiveNumber);
    generate->add_flag("--resume", gn_opts.resume, "keep artifacts already present in --out");
    generate->add_option("--out", gn_out, "rule artifact store")->required();
    add_llm_flags(generate, gn_llm);
    generate->callback([&] {
        action = [&] {
            const auto pairs = parse_pair_artifact(read_file(gn_pairs));
            if (pairs.empty()) {
                std::cerr << "generate: no pairs\n";
                return kExitNothing;
            }
            const auto records = index_records(parse_spec_document(read_file(gn_specs)));
            PipelineConfig cfg;
            cfg.compiler = gn_compiler;
            cfg.codeql = gn_codeql;
            if (!gn_mock.empty()) {
                cfg.compiler_script = gn_mock;
            }
            auto compiler = make_compiler(cfg);
            auto gateway = make_gateway(gn_llm);
            gn_opts.rule.compile_limit = std::chrono::milliseconds(gn_timeout);
            fs::create_directories(gn_out);
            const auto artifacts = generate_all(pairs, records, *compiler, *gateway, gn_out, gn_opts);
            for (const auto& a : artifacts) {
                std::cerr << "generate: " << a.pair.id() << " " << to_string(a.status) << " after " << a.attempts
                          << " attempt(s)" << (a.abort_reason.empty() ? "" : ": " + a.abort_reason) << "\n";
            }
            return kExitOk;
        };
    });

    // scan
    auto* scan_cmd = app.add_subcommand("scan", "execute compiled rules against an analysis database");
    std::string sc_rules, sc_db, sc_out, sc_compiler = "mock", sc_codeql, sc_work;
    scan_cmd->add_option("--rules", sc_rules)->required();
    scan_cmd->add_option("--database", sc_db, "codeql database, or the source tree for --compiler mock")->required();
    scan_cmd->add_option("--out", sc_out)->required();
    scan_cmd->add_option("--compiler", sc_compiler)->check(CLI::IsMember({"codeql", "mock"}));
    scan_cmd->add_option("--codeql", sc_codeql, "codeql executable");
    scan_cmd->add_option("--work-dir", sc_work, "scratch directory for rule packs");
    scan_cmd->callback([&] {
        action = [&] {
            const auto artifacts = load_store(sc_rules);
            const bool any = std::any_of(artifacts.begin(), artifacts.end(),
                                         [](const RuleArtifact& a) { return a.status == RuleStatus::Compiled; });
            if (!any) {
                write_file_atomic(sc_out, serialize_findings({}));
                std::cerr << "scan: no compiled rules\n";
                return kExitNothing;
            }
            PipelineConfig cfg;
            cfg.compiler = sc_compiler;
            cfg.codeql = sc_codeql;
            auto compiler = make_compiler(cfg);
            const auto work = sc_work.empty() ? fs::path(sc_out).parent_path() / "scan" : fs::path(sc_work);
            const auto result = scan(artifacts, sc_db, *compiler, fs::absolute(work));
            print_warnings(result.failures);
            write_file_atomic(sc_out, serialize_findings(result.findings));
            std::cerr << "scan: " << result.findings.size() << " findings\n";
            return kExitOk;
        };
    });

    // run
    auto* run = app.add_subcommand("run", "run the whole pipeline from a config file");
    std::string rn_config, rn_out, rn_stop, rn_llm, rn_script;
    std::vector<std::string> rn_sets;
    bool rn_resume = false;
    run->add_option("--config", rn_config)->required()->check(CLI::ExistingFile);
    run->add_flag("--resume", rn_resume, "skip stages whose artifacts are already persisted");
    run->add_option("--out", rn_out, "run directory (overrides output.dir)");
    run->add_option("--set", rn_sets, "override a config key: section.key=value");
    run->add_option("--llm", rn_llm)->check(CLI::IsMember({"live", "mock"}));
    run->add_option("--mock-script", rn_script);
    run->add_option("--stop-after", rn_stop)->group("");
    run->callback([&] {
        action = [&] {
            auto cfg = PipelineConfig::load(rn_config);
            const auto cwd = fs::current_path();
            for (const auto& s : rn_sets) {
                const auto eq = s.find('=');
                if (eq == std::string::npos) {
                    throw ConfigError("--set expects key=value, got '" + s + "'");
                }
                cfg.set(trim(s.substr(0, eq)), s.substr(eq + 1), cwd);
            }
            if (!rn_out.empty()) {
                cfg.set("output.dir", rn_out, cwd);
            }
            if (!rn_llm.empty()) {
                cfg.set("llm.mode", rn_llm, cwd);
            }
            if (!rn_script.empty()) {
                cfg.set("llm.mock_script", rn_script, cwd);
            }
            RunOptions opts;
            opts.resume = rn_resume;
            if (!rn_stop.empty()) {
                opts.stop_after = rn_stop;
            }
            const auto report = run_pipeline(cfg, opts);
            if (!report) {
                std::cerr << "run: stopped after stage " << rn_stop << "\n";
                return kExitOk;
            }
            std::cout << render_report(*report, ReportFormat::Text);
            return kExitOk;
        };
    });

    // report
    auto* report = app.add_subcommand("report", "render the report of a run directory");
    std::string rp_run, rp_format = "text", rp_out;
    report->add_option("--run", rp_run)->required()->check(CLI::ExistingDirectory);
    report->add_option("--format", rp_format)->check(CLI::IsMember({"json", "text", "sarif"}));
    report->add_option("--out", rp_out, "write here instead of stdout");
    report->callback([&] {
        action = [&] {
            const auto r = report_from_run(rp_run);
            const auto format = report_format_from_string(rp_format);
            if (rp_out.empty()) {
                std::cout << render_report(r, format);
            } else {
                emit_report(r, format, rp_out);
            }
            return kExitOk;
        };
    });

    // validate-fixture
    auto* fixture = app.add_subcommand("validate-fixture", "check a fixture corpus against its manifest");
    std::string fx_root;
    fixture->add_option("--root", fx_root)->required();
    fixture->callback([&] {
        action = [&] {
            const auto v = validate_fixture(fx_root);
            for (const auto& c : v.checks) {
                std::cout << "ok: " << c << "\n";
            }
            return kExitOk;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        return action();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InvalidFilterConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NothingToPair& e) {
        std::cerr << "nothing to do: " << e.what() << "\n";
        return kExitNothing;
    } catch (const StageFailure& e) {
        std::cerr << "stage failed: " << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitStage;
    }
}
