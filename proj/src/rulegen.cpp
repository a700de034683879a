#include "qlforge/rulegen.hpp"

#include "qlforge/error.hpp"
#include "qlforge/extractor.hpp"
#include "qlforge/process.hpp"
#include "qlforge/prompt.hpp"
#include "qlforge/util.hpp"

#include <algorithm>
#include <mutex>
#include <regex>
#include <set>
#include <stdexcept>
#include <thread>

namespace qlforge {

using nlohmann::json;

std::string_view to_string(CompileStatus status) {
    switch (status) {
    case CompileStatus::Ok:
        return "ok";
    case CompileStatus::Error:
        return "error";
    case CompileStatus::Timeout:
        return "timeout";
    }
    return "error";
}

namespace {

CompileStatus compile_status_from_string(std::string_view text) {
    if (text == "ok") {
        return CompileStatus::Ok;
    }
    if (text == "timeout") {
        return CompileStatus::Timeout;
    }
    if (text == "error") {
        return CompileStatus::Error;
    }
    throw SpecFormatError("unknown compile status: " + std::string(text));
}

std::string utf8_prefix(const std::string& text, std::size_t max_bytes) {
    if (text.size() <= max_bytes) {
        return text;
    }
    auto cut = max_bytes;
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xc0) == 0x80) {
        --cut;
    }
    return text.substr(0, cut);
}

} // namespace

std::string_view to_string(RuleStatus status) {
    switch (status) {
    case RuleStatus::Compiled:
        return "compiled";
    case RuleStatus::Invalid:
        return "invalid";
    case RuleStatus::Aborted:
        return "aborted";
    }
    return "aborted";
}

RuleStatus rule_status_from_string(std::string_view text) {
    if (text == "compiled") {
        return RuleStatus::Compiled;
    }
    if (text == "invalid") {
        return RuleStatus::Invalid;
    }
    if (text == "aborted") {
        return RuleStatus::Aborted;
    }
    throw SpecFormatError("unknown rule status: " + std::string(text));
}

std::vector<Diagnostic> cap_diagnostics(std::vector<Diagnostic> diagnostics) {
    if (diagnostics.size() > kMaxDiagnostics) {
        diagnostics.resize(kMaxDiagnostics);
    }
    std::size_t used = 0;
    for (std::size_t i = 0; i < diagnostics.size(); ++i) {
        const auto left = kDiagnosticsByteCap - used;
        if (diagnostics[i].message.size() >= left) {
            diagnostics[i].message = utf8_prefix(diagnostics[i].message, left);
            diagnostics.resize(std::max<std::size_t>(i + 1, 1));
            break;
        }
        used += diagnostics[i].message.size();
    }
    return diagnostics;
}

std::string render_diagnostics(const std::vector<Diagnostic>& diagnostics) {
    static constexpr std::string_view kMarker = "\n[diagnostics truncated]\n";
    std::string out;
    const auto count = std::min(diagnostics.size(), kMaxDiagnostics);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& d = diagnostics[i];
        if (d.line) {
            out += std::to_string(*d.line);
            if (d.column) {
                out += ":" + std::to_string(*d.column);
            }
            out += ": ";
        }
        out += d.message;
        out += '\n';
        if (out.size() > kDiagnosticsByteCap) {
            break;
        }
    }
    if (out.size() > kDiagnosticsByteCap || count < diagnostics.size()) {
        out = utf8_prefix(out, kDiagnosticsByteCap - kMarker.size());
        out += kMarker;
    }
    return out;
}

RuleStatus replay_status(const std::vector<TranscriptStep>& transcript, int max_iters) {
    if (!transcript.empty() && transcript.back().result.ok()) {
        return RuleStatus::Compiled;
    }
    const bool all_failed = std::none_of(transcript.begin(), transcript.end(),
                                         [](const TranscriptStep& s) { return s.result.ok(); });
    if (static_cast<int>(transcript.size()) == max_iters && all_failed) {
        return RuleStatus::Invalid;
    }
    return RuleStatus::Aborted;
}

// ---------------------------------------------------------------------------
// Findings

json to_json(const Finding& finding) {
    return {{"pair", finding.pair_id},
            {"file", finding.file},
            {"start_line", finding.start_line},
            {"end_line", finding.end_line},
            {"message", finding.message}};
}

Finding finding_from_json(const json& doc) {
    return {doc.at("pair").get<std::string>(), doc.at("file").get<std::string>(),
            doc.at("start_line").get<int>(), doc.at("end_line").get<int>(), doc.at("message").get<std::string>()};
}

std::vector<Finding> findings_from_sarif(const json& sarif, const std::string& pair_id) {
    std::vector<Finding> out;
    for (const auto& run : sarif.value("runs", json::array())) {
        for (const auto& result : run.value("results", json::array())) {
            const auto locations = result.value("locations", json::array());
            if (locations.empty()) {
                continue;
            }
            const auto& physical = locations.at(0).at("physicalLocation");
            Finding f;
            f.pair_id = pair_id;
            f.file = physical.at("artifactLocation").at("uri").get<std::string>();
            const auto region = physical.value("region", json::object());
            f.start_line = region.value("startLine", 1);
            f.end_line = region.value("endLine", f.start_line);
            f.message = result.value("message", json::object()).value("text", "");
            out.push_back(std::move(f));
        }
    }
    return out;
}

std::string serialize_findings(const std::vector<Finding>& findings) {
    json list = json::array();
    for (const auto& f : findings) {
        list.push_back(to_json(f));
    }
    return json{{"version", 1}, {"findings", list}}.dump(2) + "\n";
}

std::vector<Finding> parse_findings(const std::string& text) {
    try {
        const auto doc = json::parse(text);
        std::vector<Finding> out;
        for (const auto& f : doc.at("findings")) {
            out.push_back(finding_from_json(f));
        }
        return out;
    } catch (const json::exception& e) {
        throw SpecFormatError(std::string("malformed findings file: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Rule text

namespace {

const ApiRecord& lookup(const RecordIndex& records, const std::string& id) {
    const auto it = records.find(id);
    if (it == records.end()) {
        throw UnknownApiId("no spec record for api id " + id);
    }
    return it->second;
}

std::string ql_string(const std::string& text) {
    std::string out = "\"";
    for (char c : text) {
        if (c == '"' || c == '\\') {
            out.push_back('\\');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

bool is_constructor(const ApiRecord& r) { return r.method == "<init>"; }

bool has_known_type(const ApiRecord& r) {
    return r.type_name != "unknown" && !r.type_name.empty() && r.package != "unknown";
}

std::string predicate_body(const ApiRecord& r, const std::string& node, bool argument) {
    std::string out;
    const std::string target = argument ? "call.getAnArgument()" : "call";
    if (is_constructor(r)) {
        out += "    exists(ClassInstanceExpr call |\n";
        out += "      call.getConstructedType().hasQualifiedName(" + ql_string(r.package) + ", " +
               ql_string(r.type_name) + ") and\n";
    } else {
        out += "    exists(MethodCall call |\n";
        out += "      call.getMethod().hasName(" + ql_string(r.method) + ") and\n";
        if (has_known_type(r)) {
            // inherited methods are declared on a supertype of the receiver type
            out += "      exists(RefType t |\n";
            out += "        t.hasQualifiedName(" + ql_string(r.package) + ", " + ql_string(r.type_name) + ") and\n";
            out += "        call.getMethod().getDeclaringType().getSourceDeclaration() = t.getASourceSupertype*()\n";
            out += "      ) and\n";
        }
    }
    out += "      " + node + ".asExpr() = " + target + "\n";
    out += "    )";
    return out;
}

std::string display_name(const ApiRecord& r) {
    return is_constructor(r) ? "new " + r.type_name : r.type_name + "." + r.method;
}

const char* kQueryFrame = R"(/**
 * @name {NAME}
 * @description {DESCRIPTION}
 * @kind path-problem
 * @problem.severity error
 * @id qlforge/{PAIR_ID}
 * @tags security
 */

import java
import semmle.code.java.dataflow.TaintTracking

module PairFlowConfig implements DataFlow::ConfigSig {
  predicate isSource(DataFlow::Node source) {
{SOURCE_BODY}
  }

  predicate isSink(DataFlow::Node sink) {
{SINK_BODY}
  }
}

module PairFlow = TaintTracking::Global<PairFlowConfig>;

import PairFlow::PathGraph

from PairFlow::PathNode source, PairFlow::PathNode sink
where PairFlow::flowPath(source, sink)
select sink.getNode(), source, sink, {MESSAGE}, source.getNode(), "user-controlled data"
)";

} // namespace

std::string render_template_rule(const SourceSinkPair& pair, const RecordIndex& records) {
    const auto& source = lookup(records, pair.source_id);
    const auto& sink = lookup(records, pair.sink_id);
    const std::string title = pair.vulnerability_class + ": " + display_name(source) + " to " + display_name(sink);
    return PromptTemplate(kQueryFrame)
        .render({{"NAME", title},
                 {"DESCRIPTION", "Data returned by " + display_name(source) + " flows into " + display_name(sink) + "."},
                 {"PAIR_ID", pair.id()},
                 {"SOURCE_BODY", predicate_body(source, "source", false)},
                 {"SINK_BODY", predicate_body(sink, "sink", true)},
                 {"MESSAGE", ql_string("This " + pair.vulnerability_class + " sink receives $@.")}});
}

std::string render_skeleton(const SourceSinkPair& pair) {
    return PromptTemplate(kQueryFrame)
        .render({{"NAME", "<title>"},
                 {"DESCRIPTION", "<one sentence>"},
                 {"PAIR_ID", pair.id()},
                 {"SOURCE_BODY", "    // HOLE: select the value returned by the source API\n    none()"},
                 {"SINK_BODY", "    // HOLE: select the argument consumed by the sink API\n    none()"},
                 {"MESSAGE", "\"<message with $@>\""}});
}

std::string extract_rule_text(const std::string& reply) {
    static const std::regex ql_fence(R"(```[ \t]*(?:ql|codeql)[ \t]*\r?\n([\s\S]*?)```)");
    static const std::regex any_fence(R"(```[^\n]*\n([\s\S]*?)```)");
    std::smatch m;
    if (std::regex_search(reply, m, ql_fence) || std::regex_search(reply, m, any_fence)) {
        return trim(m[1].str()) + "\n";
    }
    auto text = trim(reply);
    return text.empty() ? text : text + "\n";
}

// ---------------------------------------------------------------------------
// Roles

namespace {

const char* kWriterSystem =
    "You are the Writer in a write/execute/repair loop that produces CodeQL queries for Java. "
    "You return one complete, compilable .ql file.";

const char* kRepairSystem =
    "You are the Repairer in a write/execute/repair loop that produces CodeQL queries for Java. "
    "You analyze compiler errors and propose concrete fixes; you never rewrite the query yourself.";

const PromptTemplate& writer_template() {
    static const PromptTemplate tmpl(R"(# Task
Write a CodeQL taint-tracking query that reports data flowing from the source
API to the sink API below.

# Pair
Pair id: {PAIR_ID}
Vulnerability class: {CLASS}
Rationale: {RATIONALE}

# Source API
{SOURCE}
# Sink API
{SINK}
# Skeleton
Keep the metadata block, module names and select clause shape. Fill the two
HOLE predicates so they match exactly the APIs above.
```ql
{SKELETON}```
{REVISION}
# Output
Reply with the complete query inside one ```ql fenced block.
)");
    return tmpl;
}

const PromptTemplate& repair_template() {
    static const PromptTemplate tmpl(R"(# Task
The query below failed to compile. Analyze the compiler output and propose
modification suggestions the Writer can apply. Do not return a full query.

# Query (attempt {ATTEMPT})
```ql
{QUERY}```

# Compiler result: {STATUS}
{DIAGNOSTICS}
# Output
A short numbered list of concrete changes, most important first.
)");
    return tmpl;
}

} // namespace

RuleDraft write_rule(const SourceSinkPair& pair, const RecordIndex& records,
                     const std::optional<std::string>& advice, const std::optional<RuleDraft>& prior,
                     Gateway& gateway) {
    if (advice && !prior) {
        throw std::invalid_argument("write_rule: repair advice requires the prior draft");
    }
    const auto& source = lookup(records, pair.source_id);
    const auto& sink = lookup(records, pair.sink_id);

    std::string revision;
    if (prior) {
        revision = "\n# Revision\nYour previous draft (attempt " + std::to_string(prior->attempt) +
                   ") did not compile.\n```ql\n" + prior->text + "```\nRepairer advice:\n" +
                   advice.value_or(kFallbackAdvice) + "\nApply the advice and return the corrected query.\n";
    }
    const auto prompt = writer_template().render({{"PAIR_ID", pair.id()},
                                                  {"CLASS", pair.vulnerability_class},
                                                  {"RATIONALE", pair.rationale},
                                                  {"SOURCE", ClassificationPrompt::record_block(source)},
                                                  {"SINK", ClassificationPrompt::record_block(sink)},
                                                  {"SKELETON", render_skeleton(pair)},
                                                  {"REVISION", revision}});

    RuleDraft draft;
    draft.pair_id = pair.id();
    draft.attempt = prior ? prior->attempt + 1 : 1;
    const auto response = gateway.complete(gateway.make_request(Stage::Write, kWriterSystem, prompt));
    draft.text = extract_rule_text(response.text);
    if (draft.text.empty()) {
        throw EmptyDraft("writer returned an empty draft for pair " + pair.id() + " (attempt " +
                         std::to_string(draft.attempt) + ")");
    }
    return draft;
}

CompileResult execute_rule(const RuleDraft& draft, RuleCompiler& compiler, const std::filesystem::path& workspace,
                           std::chrono::milliseconds limit) {
    std::error_code ec;
    if (!std::filesystem::is_directory(workspace, ec)) {
        throw std::invalid_argument("execute_rule: workspace not prepared: " + workspace.string());
    }
    const auto rule_file = workspace / "rule.ql";
    write_file_atomic(rule_file, draft.text);

    auto result = compiler.compile({draft.pair_id, draft.attempt, rule_file, limit});
    if (result.elapsed > limit && result.status != CompileStatus::Timeout) {
        result.status = CompileStatus::Timeout;
        result.diagnostics.clear();
    }
    if (result.status == CompileStatus::Timeout && result.diagnostics.empty()) {
        result.diagnostics.push_back({"compilation exceeded the time limit of " + std::to_string(limit.count()) + " ms",
                                      std::nullopt, std::nullopt});
    }
    if (result.status == CompileStatus::Error && result.diagnostics.empty()) {
        result.diagnostics.push_back({"compiler reported failure without diagnostics", std::nullopt, std::nullopt});
    }
    result.diagnostics = cap_diagnostics(std::move(result.diagnostics));
    return result;
}

std::string repair_advice(const RuleDraft& draft, const CompileResult& result, Gateway& gateway) {
    if (result.ok()) {
        throw std::invalid_argument("repair_advice: compile result is Ok");
    }
    const auto prompt = repair_template().render({{"ATTEMPT", std::to_string(draft.attempt)},
                                                  {"QUERY", draft.text.empty() ? "(empty draft)\n" : draft.text},
                                                  {"STATUS", std::string(to_string(result.status))},
                                                  {"DIAGNOSTICS", render_diagnostics(result.diagnostics)}});
    const auto response = gateway.complete(gateway.make_request(Stage::Repair, kRepairSystem, prompt));
    auto advice = trim(response.text);
    if (advice.empty()) {
        advice = kFallbackAdvice;
        if (!result.diagnostics.empty()) {
            advice += ": " + utf8_prefix(result.diagnostics.front().message, 500);
        }
    }
    return advice;
}

RuleArtifact generate_rule(const SourceSinkPair& pair, const RecordIndex& records, RuleCompiler& compiler,
                           Gateway& gateway, const std::filesystem::path& workspace, const RuleGenOptions& options) {
    if (options.max_iters < 1) {
        throw std::invalid_argument("generate_rule: max_iters must be at least 1");
    }
    RuleArtifact artifact;
    artifact.pair = pair;

    auto abort = [&](const std::string& reason) {
        artifact.status = RuleStatus::Aborted;
        artifact.abort_reason = reason;
        artifact.attempts = static_cast<int>(artifact.transcript.size());
        return artifact;
    };

    std::optional<std::string> advice;
    std::optional<RuleDraft> prior;
    for (int attempt = 1;; ++attempt) {
        TranscriptStep step;
        try {
            step.draft = write_rule(pair, records, advice, prior, gateway);
            step.result = execute_rule(step.draft, compiler, workspace, options.compile_limit);
        } catch (const EmptyDraft&) {
            step.draft = RuleDraft{pair.id(), "", attempt};
            step.result = CompileResult{CompileStatus::Error, {{"writer produced an empty draft", std::nullopt, std::nullopt}}, {}};
        } catch (const CompilerUnavailable& e) {
            return abort(std::string("compiler unavailable: ") + e.what());
        } catch (const Error& e) {
            return abort(e.what());
        }

        if (step.result.ok()) {
            artifact.final_rule = step.draft.text;
            artifact.transcript.push_back(std::move(step));
            artifact.status = RuleStatus::Compiled;
            break;
        }
        if (attempt >= options.max_iters) {
            artifact.transcript.push_back(std::move(step));
            artifact.status = RuleStatus::Invalid;
            break;
        }
        try {
            step.advice = repair_advice(step.draft, step.result, gateway);
        } catch (const Error& e) {
            artifact.transcript.push_back(std::move(step));
            return abort(e.what());
        }
        advice = step.advice;
        prior = step.draft;
        artifact.transcript.push_back(std::move(step));
    }
    artifact.attempts = static_cast<int>(artifact.transcript.size());
    return artifact;
}

std::vector<RuleArtifact> generate_all(const std::vector<SourceSinkPair>& pairs, const RecordIndex& records,
                                       RuleCompiler& compiler, Gateway& gateway,
                                       const std::filesystem::path& store_root, const GenerateOptions& options) {
    std::vector<RuleArtifact> out(pairs.size());
    parallel_for(pairs.size(), options.workers, [&](std::size_t i) {
        const auto& pair = pairs[i];
        const auto dir = store_root / pair.id();
        std::error_code ec;
        if (options.resume && std::filesystem::exists(dir / "status.json", ec)) {
            out[i] = load_artifact(dir);
            return;
        }
        const auto workspace = dir / "work";
        std::filesystem::create_directories(workspace, ec);
        try {
            compiler.prepare_workspace(workspace);
            out[i] = generate_rule(pair, records, compiler, gateway, workspace, options.rule);
        } catch (const CompilerUnavailable& e) {
            out[i].pair = pair;
            out[i].status = RuleStatus::Aborted;
            out[i].abort_reason = std::string("compiler unavailable: ") + e.what();
        }
        store_artifact(dir, out[i]);
    });
    std::sort(out.begin(), out.end(),
              [](const RuleArtifact& a, const RuleArtifact& b) { return a.pair.id() < b.pair.id(); });
    return out;
}

ScanResult scan(const std::vector<RuleArtifact>& artifacts, const std::filesystem::path& database,
                RuleCompiler& compiler, const std::filesystem::path& workspace) {
    ScanResult result;
    std::vector<Finding> all;
    for (const auto& artifact : artifacts) {
        if (artifact.status != RuleStatus::Compiled) {
            continue;
        }
        const auto pair_id = artifact.pair.id();
        const auto dir = workspace / pair_id;
        try {
            std::error_code ec;
            if (!std::filesystem::exists(dir / "qlpack.yml", ec)) {
                std::filesystem::create_directories(dir, ec);
                compiler.prepare_workspace(dir);
            }
            const auto rule_file = dir / "rule.ql";
            write_file_atomic(rule_file, artifact.final_rule);
            auto findings = compiler.run(pair_id, rule_file, database);
            all.insert(all.end(), findings.begin(), findings.end());
        } catch (const Error& e) {
            result.failures.push_back("scan: rule " + pair_id + " failed: " + e.what());
        }
    }
    std::sort(all.begin(), all.end(), [](const Finding& a, const Finding& b) {
        return std::tie(a.file, a.start_line, a.end_line, a.pair_id, a.message) <
               std::tie(b.file, b.start_line, b.end_line, b.pair_id, b.message);
    });
    std::set<std::tuple<std::string, int, int, std::string>> seen;
    for (auto& f : all) {
        if (seen.emplace(f.file, f.start_line, f.end_line, f.pair_id).second) {
            result.findings.push_back(std::move(f));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Artifact store

namespace {

json step_to_json(const TranscriptStep& step) {
    json diags = json::array();
    for (const auto& d : step.result.diagnostics) {
        diags.push_back({{"message", d.message},
                         {"line", d.line ? json(*d.line) : json(nullptr)},
                         {"column", d.column ? json(*d.column) : json(nullptr)}});
    }
    return {{"attempt", step.draft.attempt},
            {"draft", step.draft.text},
            {"compile",
             {{"status", to_string(step.result.status)}, {"diagnostics", diags}, {"elapsed_ms", step.result.elapsed.count()}}},
            {"advice", step.advice ? json(*step.advice) : json(nullptr)}};
}

TranscriptStep step_from_json(const json& doc, const std::string& pair_id) {
    TranscriptStep step;
    step.draft = RuleDraft{pair_id, doc.at("draft").get<std::string>(), doc.at("attempt").get<int>()};
    const auto& compile = doc.at("compile");
    step.result.status = compile_status_from_string(compile.at("status").get<std::string>());
    step.result.elapsed = std::chrono::milliseconds(compile.at("elapsed_ms").get<long long>());
    for (const auto& d : compile.at("diagnostics")) {
        Diagnostic diag{d.at("message").get<std::string>(), std::nullopt, std::nullopt};
        if (!d.at("line").is_null()) {
            diag.line = d.at("line").get<int>();
        }
        if (!d.at("column").is_null()) {
            diag.column = d.at("column").get<int>();
        }
        step.result.diagnostics.push_back(std::move(diag));
    }
    if (!doc.at("advice").is_null()) {
        step.advice = doc.at("advice").get<std::string>();
    }
    return step;
}

} // namespace

void store_artifact(const std::filesystem::path& dir, const RuleArtifact& artifact) {
    std::string transcript;
    for (const auto& step : artifact.transcript) {
        transcript += step_to_json(step).dump() + "\n";
    }
    write_file_atomic(dir / "transcript.jsonl", transcript);
    const std::string rule = artifact.status == RuleStatus::Compiled || artifact.transcript.empty()
                                 ? artifact.final_rule
                                 : artifact.transcript.back().draft.text;
    write_file_atomic(dir / "rule.ql", rule);
    const json status = {{"pair", to_json(artifact.pair)},
                         {"status", to_string(artifact.status)},
                         {"attempts", artifact.attempts},
                         {"final_rule", artifact.status == RuleStatus::Compiled ? json(artifact.final_rule) : json(nullptr)},
                         {"abort_reason", artifact.abort_reason}};
    // status.json goes last: its presence marks the artifact complete
    write_file_atomic(dir / "status.json", status.dump(2) + "\n");
}

RuleArtifact load_artifact(const std::filesystem::path& dir) {
    try {
        const auto status = json::parse(read_file(dir / "status.json"));
        RuleArtifact artifact;
        artifact.pair = pair_from_json(status.at("pair"));
        artifact.status = rule_status_from_string(status.at("status").get<std::string>());
        artifact.attempts = status.at("attempts").get<int>();
        if (!status.at("final_rule").is_null()) {
            artifact.final_rule = status.at("final_rule").get<std::string>();
        }
        artifact.abort_reason = status.value("abort_reason", "");
        const auto pair_id = artifact.pair.id();
        for (const auto& line : split_lines(read_file(dir / "transcript.jsonl"))) {
            if (!trim(line).empty()) {
                artifact.transcript.push_back(step_from_json(json::parse(line), pair_id));
            }
        }
        return artifact;
    } catch (const json::exception& e) {
        throw SpecFormatError("malformed rule artifact in " + dir.string() + ": " + e.what());
    }
}

std::vector<RuleArtifact> load_store(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> dirs;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(root, ec)) {
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "status.json")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<RuleArtifact> out;
    for (const auto& d : dirs) {
        out.push_back(load_artifact(d));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mock compiler

MockCompiler::MockCompiler(MockCompileScript fallback, std::map<std::string, MockCompileScript> per_pair)
    : fallback_(std::move(fallback)), per_pair_(std::move(per_pair)) {}

namespace {

MockCompileScript script_from_json(const json& doc) {
    MockCompileScript script;
    script.fail_count = doc.value("fail_count", 0);
    if (doc.contains("results")) {
        script.results = doc.at("results").get<std::vector<std::string>>();
        for (const auto& r : script.results) {
            compile_status_from_string(r);
        }
    }
    script.diagnostics = doc.value("diagnostics", script.diagnostics);
    script.delay = std::chrono::milliseconds(doc.value("delay_ms", 0));
    return script;
}

std::vector<Diagnostic> diagnostics_from_text(const std::string& text) {
    static const std::regex line_re(R"(\bline\s+(\d+)(?:\s*,?\s*col(?:umn)?\s+(\d+))?)", std::regex::icase);
    std::vector<Diagnostic> out;
    for (const auto& line : split_lines(text)) {
        if (trim(line).empty()) {
            continue;
        }
        Diagnostic d{line, std::nullopt, std::nullopt};
        std::smatch m;
        if (std::regex_search(line, m, line_re)) {
            d.line = std::stoi(m[1].str());
            if (m[2].matched) {
                d.column = std::stoi(m[2].str());
            }
        }
        out.push_back(std::move(d));
    }
    return out;
}

} // namespace

MockCompiler MockCompiler::parse(const std::string& json_text) {
    try {
        const auto doc = json::parse(json_text);
        MockCompileScript fallback;
        if (doc.contains("default")) {
            fallback = script_from_json(doc.at("default"));
        }
        std::map<std::string, MockCompileScript> per_pair;
        const auto pairs = doc.value("pairs", json::object());
        for (const auto& [key, value] : pairs.items()) {
            per_pair.emplace(key, script_from_json(value));
        }
        return MockCompiler(std::move(fallback), std::move(per_pair));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("mock compiler script: ") + e.what());
    } catch (const SpecFormatError& e) {
        throw ConfigError(std::string("mock compiler script: ") + e.what());
    }
}

MockCompiler MockCompiler::load(const std::filesystem::path& path) {
    try {
        return parse(read_file(path));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("mock compiler script: ") + e.what());
    }
}

void MockCompiler::prepare_workspace(const std::filesystem::path& workspace) {
    write_file_atomic(workspace / "qlpack.yml", "name: qlforge/generated\nversion: 0.0.1\n");
}

CompileResult MockCompiler::compile(const CompileJob& job) {
    ++compile_calls_;
    const auto it = per_pair_.find(job.pair_id);
    const auto& script = it != per_pair_.end() ? it->second : fallback_;

    CompileResult result;
    if (script.delay.count() > 0) {
        std::this_thread::sleep_for(std::min(script.delay, job.limit));
    }
    result.elapsed = script.delay;

    const auto text = read_file(job.rule_file);
    if (trim(text).empty()) {
        result.status = CompileStatus::Error;
        result.diagnostics.push_back({"empty query file", 1, 1});
        return result;
    }
    if (text.find("isSource") == std::string::npos || text.find("isSink") == std::string::npos) {
        result.status = CompileStatus::Error;
        result.diagnostics.push_back({"query does not define isSource and isSink predicates", std::nullopt, std::nullopt});
        return result;
    }

    std::string outcome;
    if (!script.results.empty()) {
        const auto index = std::min<std::size_t>(static_cast<std::size_t>(std::max(job.attempt, 1)) - 1,
                                                 script.results.size() - 1);
        outcome = script.results[index];
    } else {
        outcome = job.attempt <= script.fail_count ? "error" : "ok";
    }
    result.status = compile_status_from_string(outcome);
    if (result.status == CompileStatus::Error) {
        result.diagnostics = diagnostics_from_text(script.diagnostics);
    }
    return result;
}

std::vector<Finding> MockCompiler::run(const std::string& pair_id, const std::filesystem::path& rule_file,
                                       const std::filesystem::path& database) {
    ++run_calls_;
    std::error_code ec;
    if (!std::filesystem::is_directory(database, ec)) {
        throw Error("analysis database not found: " + database.string());
    }
    const auto endpoints = rule_endpoints(read_file(rule_file));
    std::vector<std::filesystem::path> files;
    for (auto it = std::filesystem::recursive_directory_iterator(database, ec);
         it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) {
            break;
        }
        if (it->is_regular_file() && it->path().extension() == ".java") {
            files.push_back(it->path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Finding> out;
    for (const auto& f : files) {
        auto found = scan_taint_flows(read_file(f), std::filesystem::relative(f, database).generic_string(),
                                      endpoints, pair_id);
        out.insert(out.end(), found.begin(), found.end());
    }
    return out;
}

RuleEndpoints rule_endpoints(const std::string& rule_text) {
    auto body_of = [&](const std::string& predicate) -> std::string {
        const auto start = rule_text.find("predicate " + predicate);
        if (start == std::string::npos) {
            return {};
        }
        const auto open = rule_text.find('{', start);
        if (open == std::string::npos) {
            return {};
        }
        int depth = 0;
        for (std::size_t i = open; i < rule_text.size(); ++i) {
            if (rule_text[i] == '{') {
                ++depth;
            } else if (rule_text[i] == '}' && --depth == 0) {
                return rule_text.substr(open, i - open + 1);
            }
        }
        return rule_text.substr(open);
    };
    static const std::regex method_re(R"re(hasName\(\s*"([^"]+)"\s*\))re");
    static const std::regex ctor_re(R"re(getConstructedType\(\)\s*\.\s*hasQualifiedName\(\s*"[^"]*"\s*,\s*"([^"]+)"\s*\))re");
    auto collect = [](const std::string& body, const std::regex& re) {
        std::vector<std::string> out;
        for (auto it = std::sregex_iterator(body.begin(), body.end(), re); it != std::sregex_iterator(); ++it) {
            out.push_back((*it)[1].str());
        }
        return out;
    };
    const auto source = body_of("isSource");
    const auto sink = body_of("isSink");
    return {collect(source, method_re), collect(source, ctor_re), collect(sink, method_re), collect(sink, ctor_re)};
}

namespace {

bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '$'; }

bool mentions(const std::string& text, const std::string& name) {
    for (auto pos = text.find(name); pos != std::string::npos; pos = text.find(name, pos + 1)) {
        const bool left = pos == 0 || (!is_ident_char(text[pos - 1]) && text[pos - 1] != '.');
        const auto end = pos + name.size();
        const bool right = end >= text.size() || !is_ident_char(text[end]);
        if (left && right) {
            return true;
        }
    }
    return false;
}

struct CallSite {
    std::size_t name_pos;  // offset within the statement
    std::size_t open;      // offset of '('
};

std::vector<CallSite> find_calls(const std::string& stmt, const std::vector<std::string>& methods,
                                 const std::vector<std::string>& ctors) {
    std::vector<CallSite> out;
    auto scan = [&](const std::string& pattern) {
        const std::regex re(pattern);
        for (auto it = std::sregex_iterator(stmt.begin(), stmt.end(), re); it != std::sregex_iterator(); ++it) {
            out.push_back({static_cast<std::size_t>(it->position(1)),
                           static_cast<std::size_t>(it->position(0) + it->length(0) - 1)});
        }
    };
    for (const auto& m : methods) {
        if (std::all_of(m.begin(), m.end(), is_ident_char)) {
            scan(R"(\.\s*()" + m + R"()\s*\()");
        }
    }
    for (const auto& c : ctors) {
        if (std::all_of(c.begin(), c.end(), is_ident_char)) {
            scan(R"(\bnew\s+(?:[\w.]+\.)?()" + c + R"()\s*(?:<[^<>()]*>)?\s*\()");
        }
    }
    std::sort(out.begin(), out.end(), [](const CallSite& a, const CallSite& b) { return a.name_pos < b.name_pos; });
    return out;
}

std::string call_arguments(const std::string& stmt, std::size_t open) {
    int depth = 0;
    for (std::size_t i = open; i < stmt.size(); ++i) {
        if (stmt[i] == '(') {
            ++depth;
        } else if (stmt[i] == ')' && --depth == 0) {
            return stmt.substr(open + 1, i - open - 1);
        }
    }
    return stmt.substr(open + 1);
}

} // namespace

std::vector<Finding> scan_taint_flows(const std::string& text, const std::string& relative_path,
                                      const RuleEndpoints& endpoints, const std::string& pair_id) {
    static const std::regex assign_re(
        R"(^\s*(?:final\s+)?(?:[A-Za-z_][\w.]*(?:\s*<[^=;]*>)?(?:\[\])*\s+)?([A-Za-z_]\w*)\s*\+?=(?!=)([\s\S]*)$)");

    const auto masked = mask_java_source(text);
    std::vector<std::size_t> line_starts{0};
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '\n') {
            line_starts.push_back(i + 1);
        }
    }
    auto line_of = [&](std::size_t offset) {
        return static_cast<int>(std::upper_bound(line_starts.begin(), line_starts.end(), offset) - line_starts.begin());
    };
    const std::string source_label = [&] {
        std::vector<std::string> names = endpoints.source_methods;
        names.insert(names.end(), endpoints.source_constructors.begin(), endpoints.source_constructors.end());
        std::string joined;
        for (const auto& n : names) {
            joined += (joined.empty() ? "" : "/") + n;
        }
        return joined;
    }();

    std::vector<Finding> out;
    std::set<std::string> tainted;
    int depth = 0;
    std::size_t stmt_begin = 0;
    for (std::size_t i = 0; i <= masked.size(); ++i) {
        const char c = i < masked.size() ? masked[i] : ';';
        if (c != ';' && c != '{' && c != '}') {
            continue;
        }
        const std::string stmt = masked.substr(stmt_begin, i - stmt_begin);
        const auto has_source = [&](const std::string& fragment) {
            return !find_calls(fragment, endpoints.source_methods, endpoints.source_constructors).empty();
        };
        const auto is_tainted = [&](const std::string& fragment) {
            return has_source(fragment) ||
                   std::any_of(tainted.begin(), tainted.end(), [&](const std::string& v) { return mentions(fragment, v); });
        };

        for (const auto& sink : find_calls(stmt, endpoints.sink_methods, endpoints.sink_constructors)) {
            const auto args = call_arguments(stmt, sink.open);
            if (is_tainted(args)) {
                const int line = line_of(stmt_begin + sink.name_pos);
                const auto sink_name = stmt.substr(sink.name_pos, sink.open - sink.name_pos);
                out.push_back({pair_id, relative_path, line, line,
                               "tainted data from " + source_label + " reaches " + trim(sink_name)});
            }
        }

        std::smatch m;
        if (std::regex_match(stmt, m, assign_re)) {
            const auto lhs = m[1].str();
            if (is_tainted(m[2].str())) {
                tainted.insert(lhs);
            } else if (stmt.find("+=") == std::string::npos) {
                tainted.erase(lhs);
            }
        }

        if (c == '{') {
            ++depth;
        } else if (c == '}') {
            --depth;
        }
        if (c != ';' && depth <= 1) {
            tainted.clear();
        }
        stmt_begin = i + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// CodeQL compiler

CodeqlCompiler::CodeqlCompiler(std::string executable) : executable_(std::move(executable)) {}

namespace {

std::string resolve_compiler(const std::string& configured) {
    try {
        return resolve_codeql(configured).string();
    } catch (const BackendUnavailable& e) {
        throw CompilerUnavailable(e.what());
    }
}

} // namespace

void CodeqlCompiler::prepare_workspace(const std::filesystem::path& workspace) {
    const auto exe = resolve_compiler(executable_);
    write_file_atomic(workspace / "qlpack.yml",
                      "name: qlforge/generated\nversion: 0.0.1\ndependencies:\n  codeql/java-all: \"*\"\n");
    const auto result = run_process({exe, "pack", "install", workspace.string()});
    if (result.exit_code != 0) {
        throw CompilerUnavailable("codeql pack install failed: " + utf8_prefix(result.err, 2000));
    }
}

std::vector<Diagnostic> CodeqlCompiler::parse_diagnostics(const std::string& output) {
    static const std::regex located_re(R"(^ERROR:\s*(.*?)\s*\(([^()]*):(\d+),(\d+)(?:-\d+)?\)\s*$)");
    static const std::regex plain_re(R"(^ERROR:\s*(.*)$)");
    std::vector<Diagnostic> out;
    for (const auto& line : split_lines(output)) {
        std::smatch m;
        if (std::regex_match(line, m, located_re)) {
            out.push_back({m[1].str(), std::stoi(m[3].str()), std::stoi(m[4].str())});
        } else if (std::regex_match(line, m, plain_re)) {
            out.push_back({m[1].str(), std::nullopt, std::nullopt});
        }
    }
    return out;
}

CompileResult CodeqlCompiler::compile(const CompileJob& job) {
    const auto exe = resolve_compiler(executable_);
    ProcessOptions options;
    options.cwd = job.rule_file.parent_path();
    options.timeout = job.limit;
    const auto proc = run_process({exe, "query", "compile", "--check-only", job.rule_file.string()}, options);

    CompileResult result;
    result.elapsed = proc.elapsed;
    if (proc.timed_out) {
        result.status = CompileStatus::Timeout;
        return result;
    }
    if (proc.exit_code == 0) {
        result.status = CompileStatus::Ok;
        return result;
    }
    result.status = CompileStatus::Error;
    result.diagnostics = parse_diagnostics(proc.err + "\n" + proc.out);
    if (result.diagnostics.empty()) {
        const auto tail = trim(proc.err.empty() ? proc.out : proc.err);
        result.diagnostics.push_back({tail.empty() ? "codeql exited with status " + std::to_string(proc.exit_code)
                                                   : utf8_prefix(tail, 2000),
                                      std::nullopt, std::nullopt});
    }
    return result;
}

std::vector<Finding> CodeqlCompiler::run(const std::string& pair_id, const std::filesystem::path& rule_file,
                                         const std::filesystem::path& database) {
    const auto exe = resolve_compiler(executable_);
    const auto sarif_path = rule_file.parent_path() / "results.sarif";
    const auto proc = run_process({exe, "database", "analyze", database.string(), rule_file.string(),
                                   "--format=sarif-latest", "--output=" + sarif_path.string(), "--rerun"});
    if (proc.exit_code != 0) {
        throw Error("codeql database analyze failed: " + utf8_prefix(proc.err, 2000));
    }
    try {
        return findings_from_sarif(json::parse(read_file(sarif_path)), pair_id);
    } catch (const json::exception& e) {
        throw Error(std::string("unreadable SARIF from codeql: ") + e.what());
    }
}

} // namespace qlforge
