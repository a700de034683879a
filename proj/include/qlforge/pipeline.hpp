#pragma once

#include "qlforge/report.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

namespace qlforge {

/// Run configuration. Loaded from an INI file whose section/key pairs form
/// dotted keys (`[llm] model = x` is `llm.model`); relative paths resolve
/// against the config file's directory. Every key can be overridden.
struct PipelineConfig {
    std::filesystem::path project;                      // project.root
    std::optional<std::filesystem::path> manifest;      // project.manifest
    std::string backend = "fixture";                    // extract.backend: fixture | codeql
    std::string codeql;                                 // extract.codeql (executable)
    std::optional<std::filesystem::path> filters;       // extract.filters (json)
    std::string llm_mode = "mock";                      // llm.mode: mock | live
    std::string llm_model = "mock";                     // llm.model
    std::string llm_endpoint;                           // llm.endpoint
    std::optional<std::filesystem::path> llm_script;    // llm.mock_script
    std::size_t budget = 6000;                          // classify.budget
    std::uint64_t seed = 0;                             // classify.seed
    std::size_t workers = 4;                            // pipeline.workers
    bool drop_sanitized = false;                        // pair.drop_sanitized
    int max_iters = kDefaultMaxIters;                   // rulegen.max_iters
    std::string compiler = "mock";                      // rulegen.compiler: mock | codeql
    std::optional<std::filesystem::path> compiler_script; // rulegen.mock_script
    std::int64_t compile_timeout_ms = 120000;           // rulegen.compile_timeout_ms
    std::filesystem::path output;                       // output.dir

    /// Throws ConfigError.
    static PipelineConfig load(const std::filesystem::path& file);
    /// Sets one dotted key; relative paths resolve against `base`. Throws
    /// ConfigError for unknown keys or bad values.
    void set(const std::string& key, const std::string& value, const std::filesystem::path& base);
    /// Throws ConfigError when a referenced path is missing or a bound is
    /// violated.
    void validate() const;
    /// Configuration echo for reports; excludes the output location.
    nlohmann::json echo() const;
};

inline constexpr std::array<const char*, 6> kStages = {"extract", "classify", "pair", "generate", "scan", "report"};

struct RunOptions {
    bool resume = false;
    /// Stop after this stage has been persisted (simulated interruption).
    std::optional<std::string> stop_after;
    /// Overrides the client built from the config (tests).
    std::shared_ptr<LlmClient> llm;
    std::shared_ptr<RuleCompiler> compiler;
};

/// Run-directory layout.
struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path specs() const { return root / "specs.json"; }
    std::filesystem::path votes() const { return root / "votes.json"; }
    std::filesystem::path pairs() const { return root / "pairs.json"; }
    std::filesystem::path rules() const { return root / "rules"; }
    std::filesystem::path findings() const { return root / "findings.json"; }
    std::filesystem::path report() const { return root / "report.json"; }
    std::filesystem::path transcript() const { return root / "llm_transcript.jsonl"; }
    std::filesystem::path timings() const { return root / "timings.json"; }
    std::filesystem::path config_echo() const { return root / "config.json"; }
    /// Completion marker and warnings of one stage.
    std::filesystem::path stage_marker(std::string_view stage) const {
        return root / "stages" / (std::string(stage) + ".json");
    }
    std::filesystem::path scan_workspace() const { return root / "scan"; }
    std::filesystem::path codeql_work() const { return root / "codeql"; }
};

std::unique_ptr<LlmClient> make_llm_client(const PipelineConfig& config);
std::unique_ptr<RuleCompiler> make_compiler(const PipelineConfig& config);
std::unique_ptr<AnalyzerBackend> make_backend(const PipelineConfig& config, const RunPaths& paths);
FilterConfig load_filters(const PipelineConfig& config);

/// Analysis database handed to scan(): the project tree for the mock
/// compiler, the CodeQL database built during extraction otherwise.
std::filesystem::path scan_database(const PipelineConfig& config, const RunPaths& paths);

/// extract, classify, pair, generate, scan, report, each persisted before
/// the next starts. Returns nullopt when stopped by `stop_after`. Fatal
/// stage errors throw StageFailure naming the stage.
std::optional<PipelineReport> run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

/// Rebuilds the report from a run directory's persisted artifacts.
PipelineReport report_from_run(const std::filesystem::path& run_dir);

} // namespace qlforge
