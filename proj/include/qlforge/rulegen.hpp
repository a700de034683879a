#pragma once

#include "qlforge/classifier.hpp"
#include "qlforge/llm.hpp"
#include "qlforge/pairer.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace qlforge {

inline constexpr int kDefaultMaxIters = 5;
inline constexpr std::size_t kMaxDiagnostics = 40;
inline constexpr std::size_t kDiagnosticsByteCap = 8 * 1024;

struct RuleDraft {
    std::string pair_id;
    std::string text;
    int attempt = 1; // 1-based

    friend bool operator==(const RuleDraft&, const RuleDraft&) = default;
};

enum class CompileStatus { Ok, Error, Timeout };
std::string_view to_string(CompileStatus status);

struct Diagnostic {
    std::string message;
    std::optional<int> line;
    std::optional<int> column;

    friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

struct CompileResult {
    CompileStatus status = CompileStatus::Ok;
    std::vector<Diagnostic> diagnostics;
    std::chrono::milliseconds elapsed{0};

    bool ok() const { return status == CompileStatus::Ok; }
    friend bool operator==(const CompileResult&, const CompileResult&) = default;
};

/// First kMaxDiagnostics entries, with messages cut so the total stays
/// within kDiagnosticsByteCap.
std::vector<Diagnostic> cap_diagnostics(std::vector<Diagnostic> diagnostics);

/// "line:col: message" lines, truncated to kDiagnosticsByteCap bytes.
std::string render_diagnostics(const std::vector<Diagnostic>& diagnostics);

enum class RuleStatus { Compiled, Invalid, Aborted };
std::string_view to_string(RuleStatus status);
RuleStatus rule_status_from_string(std::string_view text);

struct TranscriptStep {
    RuleDraft draft;
    CompileResult result;
    std::optional<std::string> advice;

    friend bool operator==(const TranscriptStep&, const TranscriptStep&) = default;
};

struct RuleArtifact {
    SourceSinkPair pair;
    RuleStatus status = RuleStatus::Invalid;
    int attempts = 0;
    std::vector<TranscriptStep> transcript;
    std::string final_rule; // set when Compiled
    std::string abort_reason;

    friend bool operator==(const RuleArtifact&, const RuleArtifact&) = default;
};

/// Terminal status implied by a transcript under a MAX cap: Compiled when
/// the last step compiled, Invalid when MAX non-Ok steps were used,
/// otherwise Aborted.
RuleStatus replay_status(const std::vector<TranscriptStep>& transcript, int max_iters);

struct Finding {
    std::string pair_id;
    std::string file;
    int start_line = 0;
    int end_line = 0;
    std::string message;

    friend bool operator==(const Finding&, const Finding&) = default;
};

nlohmann::json to_json(const Finding& finding);
Finding finding_from_json(const nlohmann::json& doc);

/// Findings from a SARIF log; every result is attributed to `pair_id`.
std::vector<Finding> findings_from_sarif(const nlohmann::json& sarif, const std::string& pair_id);

struct CompileJob {
    std::string pair_id;
    int attempt = 1;
    std::filesystem::path rule_file;
    std::chrono::milliseconds limit{120000};
};

/// Compiles rule files and executes compiled rules against an analysis
/// database. Compilation is deterministic for a fixed input and toolchain.
class RuleCompiler {
public:
    virtual ~RuleCompiler() = default;
    virtual std::string name() const = 0;
    /// Writes the rule-pack scaffold into `workspace`. Throws
    /// CompilerUnavailable.
    virtual void prepare_workspace(const std::filesystem::path& workspace) = 0;
    virtual CompileResult compile(const CompileJob& job) = 0;
    /// Throws Error on execution failure.
    virtual std::vector<Finding> run(const std::string& pair_id, const std::filesystem::path& rule_file,
                                     const std::filesystem::path& database) = 0;
};

struct MockCompileScript {
    int fail_count = 0;
    /// Per-attempt outcomes ("ok", "error", "timeout"); overrides fail_count.
    /// Attempts past the end reuse the last entry.
    std::vector<std::string> results;
    std::string diagnostics = "syntax error";
    std::chrono::milliseconds delay{0};
};

/// Scripted compiler. Outcomes depend only on (pair id, attempt), so reruns
/// and resumed runs see identical results. Drafts without isSource/isSink
/// predicates are always rejected. run() performs an intraprocedural
/// line-level taint scan over the Java files under the database directory.
///
/// Script file:
///   {"version": 1, "default": {...}, "pairs": {"<pair id>": {"fail_count": 1,
///    "results": ["error", "ok"], "diagnostics": "...", "delay_ms": 0}}}
class MockCompiler final : public RuleCompiler {
public:
    MockCompiler() = default;
    MockCompiler(MockCompileScript fallback, std::map<std::string, MockCompileScript> per_pair);
    MockCompiler(MockCompiler&& other) noexcept
        : fallback_(std::move(other.fallback_)), per_pair_(std::move(other.per_pair_)),
          compile_calls_(other.compile_calls_.load()), run_calls_(other.run_calls_.load()) {}

    static MockCompiler parse(const std::string& json_text);
    static MockCompiler load(const std::filesystem::path& path);

    std::string name() const override { return "mock"; }
    void prepare_workspace(const std::filesystem::path& workspace) override;
    CompileResult compile(const CompileJob& job) override;
    std::vector<Finding> run(const std::string& pair_id, const std::filesystem::path& rule_file,
                             const std::filesystem::path& database) override;

    std::size_t compile_calls() const { return compile_calls_.load(); }
    std::size_t run_calls() const { return run_calls_.load(); }

private:
    MockCompileScript fallback_;
    std::map<std::string, MockCompileScript> per_pair_;
    std::atomic<std::size_t> compile_calls_{0};
    std::atomic<std::size_t> run_calls_{0};
};

/// What a rule's isSource/isSink predicates select: method names from
/// hasName("...") and constructed types from getConstructedType().
struct RuleEndpoints {
    std::vector<std::string> source_methods;
    std::vector<std::string> source_constructors;
    std::vector<std::string> sink_methods;
    std::vector<std::string> sink_constructors;
};

RuleEndpoints rule_endpoints(const std::string& rule_text);

/// Line-level taint scan of one Java file: variables assigned from a source
/// call (or from an expression naming a tainted variable) become tainted;
/// a sink call whose arguments name a tainted variable or contain a source
/// call is reported at the sink's line. Taint does not cross method bodies.
std::vector<Finding> scan_taint_flows(const std::string& text, const std::string& relative_path,
                                      const RuleEndpoints& endpoints, const std::string& pair_id);

/// Drives the external `codeql` binary.
class CodeqlCompiler final : public RuleCompiler {
public:
    explicit CodeqlCompiler(std::string executable = {});

    std::string name() const override { return "codeql"; }
    void prepare_workspace(const std::filesystem::path& workspace) override;
    CompileResult compile(const CompileJob& job) override;
    std::vector<Finding> run(const std::string& pair_id, const std::filesystem::path& rule_file,
                             const std::filesystem::path& database) override;

    /// Parses `codeql query compile` output into diagnostics.
    static std::vector<Diagnostic> parse_diagnostics(const std::string& output);

private:
    std::string executable_;
};

/// The known-good taint-tracking query for a pair, built from record
/// metadata alone.
std::string render_template_rule(const SourceSinkPair& pair, const RecordIndex& records);

/// The writer's seed skeleton: template module structure with the
/// isSource/isSink bodies left as holes.
std::string render_skeleton(const SourceSinkPair& pair);

/// Extracts the query text from a model reply (first ```ql fenced block,
/// else any fenced block, else the whole trimmed reply).
std::string extract_rule_text(const std::string& reply);

/// Writer role. `advice` requires `prior`; the revision's attempt number is
/// prior.attempt + 1. Throws EmptyDraft on an empty reply.
RuleDraft write_rule(const SourceSinkPair& pair, const RecordIndex& records,
                     const std::optional<std::string>& advice, const std::optional<RuleDraft>& prior,
                     Gateway& gateway);

/// Executor role: writes the draft into the prepared workspace and compiles
/// it. A compile running past `limit` is reported as Timeout.
CompileResult execute_rule(const RuleDraft& draft, RuleCompiler& compiler,
                           const std::filesystem::path& workspace,
                           std::chrono::milliseconds limit = std::chrono::milliseconds{120000});

inline constexpr const char* kFallbackAdvice = "Address the first diagnostic";

/// Repairer role: advice text only; it never edits the rule. An empty reply
/// yields kFallbackAdvice plus the first diagnostic.
std::string repair_advice(const RuleDraft& draft, const CompileResult& result, Gateway& gateway);

struct RuleGenOptions {
    int max_iters = kDefaultMaxIters;
    std::chrono::milliseconds compile_limit{120000};
};

/// Write, execute, and while non-Ok and attempts < MAX: repair, write the
/// revision, execute again. Never calls anything after the first Ok.
RuleArtifact generate_rule(const SourceSinkPair& pair, const RecordIndex& records, RuleCompiler& compiler,
                           Gateway& gateway, const std::filesystem::path& workspace,
                           const RuleGenOptions& options = {});

struct GenerateOptions {
    RuleGenOptions rule;
    std::size_t workers = 4;
    /// Skip pairs whose status.json already exists in the store.
    bool resume = false;
};

/// Runs generate_rule for every pair concurrently and persists each artifact
/// under `store_root/<pair id>/`. Returns artifacts sorted by pair id.
std::vector<RuleArtifact> generate_all(const std::vector<SourceSinkPair>& pairs, const RecordIndex& records,
                                       RuleCompiler& compiler, Gateway& gateway,
                                       const std::filesystem::path& store_root, const GenerateOptions& options);

struct ScanResult {
    std::vector<Finding> findings;
    std::vector<std::string> failures;
};

/// Executes every Compiled artifact's rule against `database`. Findings are
/// deduplicated by (location, pair) and sorted by file then line.
ScanResult scan(const std::vector<RuleArtifact>& artifacts, const std::filesystem::path& database,
                RuleCompiler& compiler, const std::filesystem::path& workspace);

/// Rule artifact store: `<dir>/rule.ql`, `transcript.jsonl`, `status.json`.
void store_artifact(const std::filesystem::path& dir, const RuleArtifact& artifact);
RuleArtifact load_artifact(const std::filesystem::path& dir);
/// Every artifact under `root`, sorted by pair id.
std::vector<RuleArtifact> load_store(const std::filesystem::path& root);

std::string serialize_findings(const std::vector<Finding>& findings);
std::vector<Finding> parse_findings(const std::string& text);

} // namespace qlforge
