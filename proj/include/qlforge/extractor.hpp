#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

namespace qlforge {

struct Param {
    std::string name;
    std::string type;

    friend bool operator==(const Param&, const Param&) = default;
};

struct SourceLocation {
    std::string file;
    int line = 0;

    friend bool operator==(const SourceLocation&, const SourceLocation&) = default;
    friend auto operator<=>(const SourceLocation&, const SourceLocation&) = default;
};

/// One extracted API call-site signature: the taint-specification unit that
/// the classifier labels.
struct ApiRecord {
    std::string id;
    std::string package;
    std::string type_name;
    std::string method;
    std::vector<Param> params;
    std::string return_type;
    std::vector<std::string> annotations;
    std::string snippet;
    SourceLocation first_seen;

    friend bool operator==(const ApiRecord&, const ApiRecord&) = default;
};

inline constexpr std::size_t kSnippetMaxLines = 20;
inline constexpr std::size_t kSnippetMaxChars = 1200;

/// Content hash of the qualified signature. Parameter names, snippet and
/// location do not participate.
std::string make_api_id(const std::string& package, const std::string& type_name,
                        const std::string& method, const std::vector<Param>& params,
                        const std::string& return_type);

/// Fills `id` from the signature and clamps the snippet to the size caps.
ApiRecord finalize_record(ApiRecord record);

/// Up to kSnippetMaxLines lines centered on the 1-based `line`, clipped to
/// kSnippetMaxChars.
std::string snippet_around(const std::vector<std::string>& lines, int line);

/// Java-style source with comment bodies and literal contents blanked to
/// spaces (quotes and newlines kept), so offsets and lines are unchanged.
std::string mask_java_source(const std::string& text);

struct BackendInfo {
    std::string name;
    std::string version;
};

/// A static-analyzer that enumerates API invocations. Output for an
/// unchanged project must be byte-identical across runs.
class AnalyzerBackend {
public:
    virtual ~AnalyzerBackend() = default;
    virtual BackendInfo info() const = 0;
    /// Raw records, one per invocation (not deduplicated). Throws
    /// BackendUnavailable when the tool cannot run.
    virtual std::vector<ApiRecord> enumerate(const std::filesystem::path& project_root) = 0;
};

/// Line-pattern scanner for a Java-style source tree. Good enough for the
/// bundled fixture corpus; not a Java parser.
class FixtureBackend final : public AnalyzerBackend {
public:
    explicit FixtureBackend(std::size_t workers = 1) : workers_(workers) {}
    BackendInfo info() const override { return {"fixture", "1"}; }
    std::vector<ApiRecord> enumerate(const std::filesystem::path& project_root) override;

    /// Scans one file's text; `relative_path` is recorded in first_seen.
    static std::vector<ApiRecord> scan_source(const std::string& text,
                                              const std::string& relative_path);

private:
    std::size_t workers_;
};

/// Drives the external `codeql` binary: builds a database, runs an
/// enumeration query and decodes the tabular result.
class CodeqlBackend final : public AnalyzerBackend {
public:
    /// `executable` empty means resolve from QLFORGE_CODEQL, then PATH.
    explicit CodeqlBackend(std::string executable = {}, std::filesystem::path work_dir = {});
    BackendInfo info() const override;
    std::vector<ApiRecord> enumerate(const std::filesystem::path& project_root) override;

    /// Decodes `codeql bqrs decode --format=csv` output of the enumeration
    /// query. Exposed for testing without the tool installed.
    static std::vector<ApiRecord> decode_csv(const std::string& csv,
                                             const std::filesystem::path& project_root);

    static const char* enumeration_query();

private:
    std::filesystem::path resolve() const;

    std::string executable_;
    std::filesystem::path work_dir_;
};

/// Resolves the codeql executable: explicit path, then QLFORGE_CODEQL, then
/// PATH. Throws BackendUnavailable.
std::filesystem::path resolve_codeql(const std::string& configured);

struct ExtractResult {
    std::vector<ApiRecord> records;
    std::vector<std::string> warnings;
};

/// Every invocation the backend reports, sorted by id (ties by location).
ExtractResult extract_apis(const std::filesystem::path& project_root, AnalyzerBackend& backend);

/// Method-name regexes. A pattern containing an escaped dot (`\.`) is
/// matched against "type_name.method" instead of the bare method name.
/// An allow match always overrides a deny match.
class FilterConfig {
public:
    FilterConfig() = default;
    /// Throws InvalidFilterConfig for a malformed pattern.
    FilterConfig(std::vector<std::string> deny, std::vector<std::string> allow);

    static FilterConfig defaults();
    static FilterConfig from_json(const nlohmann::json& doc);

    bool denies(const ApiRecord& record) const;
    bool allows(const ApiRecord& record) const;
    bool retains(const ApiRecord& record) const { return allows(record) || !denies(record); }

    const std::vector<std::string>& deny_patterns() const { return deny_source_; }
    const std::vector<std::string>& allow_patterns() const { return allow_source_; }

private:
    std::vector<std::string> deny_source_;
    std::vector<std::string> allow_source_;
    std::vector<std::regex> deny_;
    std::vector<std::regex> allow_;
};

std::vector<ApiRecord> filter_risky(const std::vector<ApiRecord>& records, const FilterConfig& rules);

/// One record per id keeping the earliest first_seen; sorted by id.
std::vector<ApiRecord> dedupe(const std::vector<ApiRecord>& records);

nlohmann::json to_json(const ApiRecord& record);
ApiRecord api_record_from_json(const nlohmann::json& doc);

struct SpecDocument {
    std::string text;
    std::vector<std::string> warnings;
};

/// {"version": 1, "apis": [...]}. Records whose strings are not valid UTF-8
/// are dropped with a warning.
SpecDocument to_spec_document(const std::vector<ApiRecord>& records);

/// Throws SpecFormatError.
std::vector<ApiRecord> parse_spec_document(const std::string& text);

} // namespace qlforge
