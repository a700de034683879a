#include "qlforge/pipeline.hpp"

#include "qlforge/error.hpp"
#include "qlforge/util.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <functional>

namespace qlforge {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto text = trim(value);
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("config key " + key + ": not a number: '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    auto v = trim(value);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "yes" || v == "on" || v == "1") {
        return true;
    }
    if (v == "false" || v == "no" || v == "off" || v == "0") {
        return false;
    }
    throw ConfigError("config key " + key + ": not a boolean: '" + value + "'");
}

fs::path resolve_path(const std::string& value, const fs::path& base) {
    fs::path p(trim(value));
    if (p.is_relative()) {
        p = base / p;
    }
    return fs::absolute(p).lexically_normal();
}

std::string one_of(const std::string& key, const std::string& value, std::initializer_list<const char*> allowed) {
    const auto v = trim(value);
    for (const char* a : allowed) {
        if (v == a) {
            return v;
        }
    }
    throw ConfigError("config key " + key + ": unsupported value '" + value + "'");
}

} // namespace

void PipelineConfig::set(const std::string& key, const std::string& value, const fs::path& base) {
    using Setter = std::function<void(const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"project.root", [&](const std::string& v) { project = resolve_path(v, base); }},
        {"project.manifest", [&](const std::string& v) { manifest = resolve_path(v, base); }},
        {"extract.backend", [&](const std::string& v) { backend = one_of(key, v, {"fixture", "codeql"}); }},
        {"extract.codeql", [&](const std::string& v) { codeql = trim(v); }},
        {"extract.filters", [&](const std::string& v) { filters = resolve_path(v, base); }},
        {"llm.mode", [&](const std::string& v) { llm_mode = one_of(key, v, {"mock", "live"}); }},
        {"llm.model", [&](const std::string& v) { llm_model = trim(v); }},
        {"llm.endpoint", [&](const std::string& v) { llm_endpoint = trim(v); }},
        {"llm.mock_script", [&](const std::string& v) { llm_script = resolve_path(v, base); }},
        {"classify.budget", [&](const std::string& v) { budget = parse_number<std::size_t>(key, v); }},
        {"classify.seed", [&](const std::string& v) { seed = parse_number<std::uint64_t>(key, v); }},
        {"pipeline.workers", [&](const std::string& v) { workers = parse_number<std::size_t>(key, v); }},
        {"pair.drop_sanitized", [&](const std::string& v) { drop_sanitized = parse_bool(key, v); }},
        {"rulegen.max_iters", [&](const std::string& v) { max_iters = parse_number<int>(key, v); }},
        {"rulegen.compiler", [&](const std::string& v) { compiler = one_of(key, v, {"mock", "codeql"}); }},
        {"rulegen.mock_script", [&](const std::string& v) { compiler_script = resolve_path(v, base); }},
        {"rulegen.compile_timeout_ms",
         [&](const std::string& v) { compile_timeout_ms = parse_number<std::int64_t>(key, v); }},
        {"output.dir", [&](const std::string& v) { output = resolve_path(v, base); }},
    };
    const auto it = setters.find(key);
    if (it == setters.end()) {
        throw ConfigError("unknown config key: " + key);
    }
    it->second(value);
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(file.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("cannot read config " + file.string() + ": " + e.message() + " (line " +
                          std::to_string(e.line()) + ")");
    }
    PipelineConfig config;
    const auto base = fs::absolute(file).parent_path();
    for (const auto& [section, node] : tree) {
        if (node.empty()) {
            config.set(section, node.data(), base);
            continue;
        }
        for (const auto& [key, value] : node) {
            config.set(section + "." + key, value.data(), base);
        }
    }
    return config;
}

void PipelineConfig::validate() const {
    auto require_file = [](const fs::path& p, const std::string& key) {
        std::error_code ec;
        if (!fs::exists(p, ec)) {
            throw ConfigError(key + ": path does not exist: " + p.string());
        }
    };
    if (project.empty()) {
        throw ConfigError("project.root is required");
    }
    std::error_code ec;
    if (!fs::is_directory(project, ec)) {
        throw ConfigError("project.root: not a directory: " + project.string());
    }
    if (manifest) {
        require_file(*manifest, "project.manifest");
    }
    if (filters) {
        require_file(*filters, "extract.filters");
    }
    if (llm_mode == "mock") {
        if (!llm_script) {
            throw ConfigError("llm.mock_script is required when llm.mode = mock");
        }
        require_file(*llm_script, "llm.mock_script");
    } else if (std::getenv("QLFORGE_LLM_KEY") == nullptr) {
        throw ConfigError("llm.mode = live requires QLFORGE_LLM_KEY in the environment");
    }
    if (compiler == "mock" && compiler_script) {
        require_file(*compiler_script, "rulegen.mock_script");
    }
    if (budget == 0) {
        throw ConfigError("classify.budget must be > 0");
    }
    if (max_iters < 1) {
        throw ConfigError("rulegen.max_iters must be >= 1");
    }
    if (workers == 0) {
        throw ConfigError("pipeline.workers must be >= 1");
    }
    if (compile_timeout_ms <= 0) {
        throw ConfigError("rulegen.compile_timeout_ms must be > 0");
    }
    if (output.empty()) {
        throw ConfigError("output.dir is required");
    }
}

json PipelineConfig::echo() const {
    auto opt_path = [](const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); };
    return {{"project.root", project.string()},
            {"project.manifest", opt_path(manifest)},
            {"extract.backend", backend},
            {"extract.filters", opt_path(filters)},
            {"llm.mode", llm_mode},
            {"llm.model", llm_model},
            {"llm.mock_script", opt_path(llm_script)},
            {"classify.budget", budget},
            {"classify.seed", seed},
            {"pair.drop_sanitized", drop_sanitized},
            {"rulegen.max_iters", max_iters},
            {"rulegen.compiler", compiler},
            {"rulegen.mock_script", opt_path(compiler_script)}};
}

// ---------------------------------------------------------------------------
// Factories

std::unique_ptr<LlmClient> make_llm_client(const PipelineConfig& config) {
    if (config.llm_mode == "live") {
        return std::make_unique<LiveClient>(LiveConfig::from_env(config.llm_endpoint));
    }
    if (!config.llm_script) {
        throw ConfigError("llm.mock_script is required when llm.mode = mock");
    }
    return std::make_unique<MockClient>(MockScript::load(*config.llm_script));
}

std::unique_ptr<RuleCompiler> make_compiler(const PipelineConfig& config) {
    if (config.compiler == "codeql") {
        return std::make_unique<CodeqlCompiler>(config.codeql);
    }
    if (config.compiler_script) {
        return std::make_unique<MockCompiler>(MockCompiler::load(*config.compiler_script));
    }
    return std::make_unique<MockCompiler>();
}

std::unique_ptr<AnalyzerBackend> make_backend(const PipelineConfig& config, const RunPaths& paths) {
    if (config.backend == "codeql") {
        return std::make_unique<CodeqlBackend>(config.codeql, paths.codeql_work());
    }
    return std::make_unique<FixtureBackend>(config.workers);
}

FilterConfig load_filters(const PipelineConfig& config) {
    if (!config.filters) {
        return FilterConfig::defaults();
    }
    try {
        return FilterConfig::from_json(json::parse(read_file(*config.filters)));
    } catch (const json::exception& e) {
        throw InvalidFilterConfig(std::string("filter file: ") + e.what());
    }
}

fs::path scan_database(const PipelineConfig& config, const RunPaths& paths) {
    if (config.compiler == "codeql") {
        return paths.codeql_work() / "db";
    }
    return config.project;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

std::vector<std::string> read_marker(const fs::path& marker) {
    return json::parse(read_file(marker)).at("warnings").get<std::vector<std::string>>();
}

void write_marker(const fs::path& marker, std::vector<std::string> warnings) {
    std::sort(warnings.begin(), warnings.end());
    write_file_atomic(marker, json{{"warnings", warnings}}.dump(2) + "\n");
}

void clear_run(const RunPaths& paths) {
    std::error_code ec;
    for (const auto& f : {paths.specs(), paths.votes(), paths.pairs(), paths.findings(), paths.report(),
                          paths.transcript(), paths.timings()}) {
        fs::remove(f, ec);
    }
    fs::remove_all(paths.root / "stages", ec);
    fs::remove_all(paths.rules(), ec);
    fs::remove_all(paths.scan_workspace(), ec);
}

json read_json_or(const fs::path& file, json fallback) {
    std::error_code ec;
    if (!fs::exists(file, ec)) {
        return fallback;
    }
    return json::parse(read_file(file));
}

} // namespace

std::optional<PipelineReport> run_pipeline(const PipelineConfig& config, const RunOptions& options) {
    config.validate();
    if (options.stop_after &&
        std::find(kStages.begin(), kStages.end(), *options.stop_after) == kStages.end()) {
        throw ConfigError("unknown stage: " + *options.stop_after);
    }
    const RunPaths paths{config.output};
    std::error_code ec;
    fs::create_directories(paths.root / "stages", ec);
    if (ec) {
        throw UnwritableOutput("cannot create run directory " + paths.root.string() + ": " + ec.message());
    }
    if (!options.resume) {
        clear_run(paths);
        fs::create_directories(paths.root / "stages", ec);
    }
    auto config_doc = config.echo();
    write_file_atomic(paths.config_echo(), config_doc.dump(2) + "\n");

    std::shared_ptr<LlmClient> client = options.llm;
    std::shared_ptr<RuleCompiler> compiler = options.compiler;
    std::unique_ptr<Gateway> gateway;
    auto llm = [&]() -> Gateway& {
        if (!gateway) {
            if (!client) {
                client = make_llm_client(config);
            }
            gateway = std::make_unique<Gateway>(client, std::make_shared<TranscriptStore>(paths.transcript()),
                                                ModelSettings{config.llm_model, std::nullopt, 4096});
        }
        return *gateway;
    };
    auto rule_compiler = [&]() -> RuleCompiler& {
        if (!compiler) {
            compiler = make_compiler(config);
        }
        return *compiler;
    };

    json timings = options.resume ? read_json_or(paths.timings(), json::object()) : json::object();
    std::vector<std::string> all_warnings;
    std::optional<PipelineReport> report;

    auto stage_body = [&](std::string_view stage) -> std::vector<std::string> {
        std::vector<std::string> warnings;
        if (stage == "extract") {
            auto backend = make_backend(config, paths);
            auto extracted = extract_apis(config.project, *backend);
            const auto filters = load_filters(config);
            const auto kept = dedupe(filter_risky(extracted.records, filters));
            warnings = std::move(extracted.warnings);
            auto doc = to_spec_document(kept);
            warnings.insert(warnings.end(), doc.warnings.begin(), doc.warnings.end());
            write_file_atomic(paths.specs(), doc.text);
        } else if (stage == "classify") {
            const auto records = parse_spec_document(read_file(paths.specs()));
            auto result = classify_all(records, llm(), {config.budget, config.seed, config.workers});
            warnings = std::move(result.warnings);
            write_file_atomic(paths.votes(), serialize_votes(result.votes));
        } else if (stage == "pair") {
            const auto records = index_records(parse_spec_document(read_file(paths.specs())));
            const auto votes = parse_votes(read_file(paths.votes()));
            auto result = pair_all(votes, records, llm(), {config.budget, config.workers, config.drop_sanitized});
            warnings = std::move(result.warnings);
            for (const auto& f : result.chunk_failures) {
                warnings.push_back("pair: " + f);
            }
            write_file_atomic(paths.pairs(), serialize_pairs(result.pairs));
        } else if (stage == "generate") {
            const auto records = index_records(parse_spec_document(read_file(paths.specs())));
            const auto pairs = parse_pair_artifact(read_file(paths.pairs()));
            fs::create_directories(paths.rules(), ec);
            GenerateOptions gen;
            gen.rule = {config.max_iters, std::chrono::milliseconds(config.compile_timeout_ms)};
            gen.workers = config.workers;
            gen.resume = options.resume;
            if (!pairs.empty()) {
                for (const auto& a : generate_all(pairs, records, rule_compiler(), llm(), paths.rules(), gen)) {
                    if (a.status == RuleStatus::Aborted) {
                        warnings.push_back("generate: " + a.pair.id() + " aborted: " + a.abort_reason);
                    }
                }
            }
        } else if (stage == "scan") {
            const auto artifacts = load_store(paths.rules());
            const bool any = std::any_of(artifacts.begin(), artifacts.end(),
                                         [](const RuleArtifact& a) { return a.status == RuleStatus::Compiled; });
            ScanResult result;
            if (any) {
                result = scan(artifacts, scan_database(config, paths), rule_compiler(), paths.scan_workspace());
            }
            warnings = std::move(result.failures);
            write_file_atomic(paths.findings(), serialize_findings(result.findings));
        } else if (stage == "report") {
            std::optional<KnownVulnManifest> manifest;
            if (config.manifest) {
                manifest = KnownVulnManifest::load(*config.manifest);
            }
            report = build_report(config_doc, load_store(paths.rules()), parse_findings(read_file(paths.findings())),
                                  manifest, all_warnings);
            emit_report(*report, ReportFormat::Json, paths.report());
        }
        return warnings;
    };

    for (const char* stage : kStages) {
        const auto marker = paths.stage_marker(stage);
        if (options.resume && fs::exists(marker, ec) && std::string_view(stage) != "report") {
            const auto warnings = read_marker(marker);
            all_warnings.insert(all_warnings.end(), warnings.begin(), warnings.end());
        } else {
            const auto started = std::chrono::steady_clock::now();
            std::vector<std::string> warnings;
            try {
                warnings = stage_body(stage);
            } catch (const StageFailure&) {
                throw;
            } catch (const Error& e) {
                throw StageFailure(stage, e.what());
            } catch (const std::exception& e) {
                throw StageFailure(stage, e.what());
            }
            std::sort(warnings.begin(), warnings.end());
            write_marker(marker, warnings);
            all_warnings.insert(all_warnings.end(), warnings.begin(), warnings.end());
            timings[stage] = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::steady_clock::now() - started)
                                 .count();
            write_file_atomic(paths.timings(), timings.dump(2) + "\n");
        }
        if (options.stop_after && *options.stop_after == stage) {
            return report;
        }
    }
    return report;
}

PipelineReport report_from_run(const fs::path& run_dir) {
    const RunPaths paths{run_dir};
    std::error_code ec;
    if (fs::exists(paths.report(), ec)) {
        return parse_report(read_file(paths.report()));
    }
    if (!fs::exists(paths.config_echo(), ec)) {
        throw ConfigError("not a run directory: " + run_dir.string());
    }
    // incomplete run: summarize whatever has been persisted
    const auto config_doc = json::parse(read_file(paths.config_echo()));
    std::optional<KnownVulnManifest> manifest;
    if (const auto m = config_doc.value("project.manifest", json(nullptr)); m.is_string()) {
        manifest = KnownVulnManifest::load(m.get<std::string>());
    }
    std::vector<std::string> warnings;
    for (const char* stage : kStages) {
        if (fs::exists(paths.stage_marker(stage), ec)) {
            const auto w = read_marker(paths.stage_marker(stage));
            warnings.insert(warnings.end(), w.begin(), w.end());
        }
    }
    std::vector<Finding> findings;
    if (fs::exists(paths.findings(), ec)) {
        findings = parse_findings(read_file(paths.findings()));
    }
    return build_report(config_doc, load_store(paths.rules()), findings, manifest, warnings);
}

} // namespace qlforge
