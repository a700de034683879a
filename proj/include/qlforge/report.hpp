#pragma once

#include "qlforge/rulegen.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace qlforge {

/// A percentage held as integer numerator/denominator. Rendered to two
/// decimals, round-half-up; a zero denominator is undefined, not 0.
struct Rate {
    std::int64_t numerator = 0;
    std::int64_t denominator = 0;

    /// Percent in hundredths (9090 == 90.90%); nullopt when undefined.
    std::optional<std::int64_t> basis_points() const;
    /// "90.90" or "undefined".
    std::string str() const;

    friend bool operator==(const Rate&, const Rate&) = default;
};

inline constexpr const char* kUndefinedRate = "undefined";

struct KnownVuln {
    std::string id;
    std::string file;
    int start_line = 0;
    int end_line = 0;
    std::string vulnerability_class;
    // fully qualified "pkg.Type.method" of the seeded endpoints (optional)
    std::string source_method;
    std::string sink_method;

    friend bool operator==(const KnownVuln&, const KnownVuln&) = default;
};

struct KnownVulnManifest {
    std::vector<KnownVuln> entries;

    /// Throws SpecFormatError on malformed input or duplicate ids.
    static KnownVulnManifest parse(const std::string& text);
    static KnownVulnManifest load(const std::filesystem::path& path);
    std::string serialize() const;

    friend bool operator==(const KnownVulnManifest&, const KnownVulnManifest&) = default;
};

struct Metrics {
    std::int64_t total_pairs = 0; // Compiled + Invalid
    std::int64_t compiled = 0;
    std::int64_t aborted = 0;
    Rate correctness;
    std::optional<std::int64_t> known_total;
    std::optional<std::int64_t> detected;
    std::optional<Rate> detection;
    std::vector<std::string> detected_ids;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

Metrics compute_metrics(const std::vector<RuleStatus>& statuses, const std::vector<Finding>& findings,
                        const std::optional<KnownVulnManifest>& manifest);
Metrics compute_metrics(const std::vector<RuleArtifact>& artifacts, const std::vector<Finding>& findings,
                        const std::optional<KnownVulnManifest>& manifest);

struct PairSummary {
    std::string pair_id;
    std::string vulnerability_class;
    RuleStatus status = RuleStatus::Invalid;
    int attempts = 0;

    friend bool operator==(const PairSummary&, const PairSummary&) = default;
};

struct PipelineReport {
    nlohmann::json config; // echo, without the output location
    Metrics metrics;
    std::vector<Finding> findings;
    std::vector<PairSummary> pairs;
    std::vector<std::string> warnings;

    friend bool operator==(const PipelineReport&, const PipelineReport&) = default;
};

PipelineReport build_report(nlohmann::json config, const std::vector<RuleArtifact>& artifacts,
                            std::vector<Finding> findings, const std::optional<KnownVulnManifest>& manifest,
                            std::vector<std::string> warnings);

enum class ReportFormat { Json, Text, Sarif };
ReportFormat report_format_from_string(std::string_view text);

nlohmann::json to_json(const PipelineReport& report);
PipelineReport report_from_json(const nlohmann::json& doc);
PipelineReport parse_report(const std::string& text);

/// Deterministic rendering: no timestamps or durations in the body.
std::string render_report(const PipelineReport& report, ReportFormat format);
/// Throws UnwritableOutput.
void emit_report(const PipelineReport& report, ReportFormat format, const std::filesystem::path& file);

} // namespace qlforge
