#include "qlforge/report.hpp"

#include "qlforge/error.hpp"
#include "qlforge/util.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace qlforge {

using nlohmann::json;

std::optional<std::int64_t> Rate::basis_points() const {
    if (denominator <= 0) {
        return std::nullopt;
    }
    // percent * 100, round-half-up
    return (numerator * 10000 * 2 + denominator) / (2 * denominator);
}

std::string Rate::str() const {
    const auto bp = basis_points();
    if (!bp) {
        return kUndefinedRate;
    }
    const auto frac = *bp % 100;
    return std::to_string(*bp / 100) + "." + (frac < 10 ? "0" : "") + std::to_string(frac);
}

// ---------------------------------------------------------------------------
// Manifest

KnownVulnManifest KnownVulnManifest::parse(const std::string& text) {
    KnownVulnManifest manifest;
    std::set<std::string> ids;
    try {
        const auto doc = json::parse(text);
        for (const auto& e : doc.at("vulnerabilities")) {
            KnownVuln v;
            v.id = e.at("id").get<std::string>();
            v.file = e.at("file").get<std::string>();
            v.start_line = e.at("start_line").get<int>();
            v.end_line = e.at("end_line").get<int>();
            v.vulnerability_class = e.at("class").get<std::string>();
            v.source_method = e.value("source_method", "");
            v.sink_method = e.value("sink_method", "");
            if (v.end_line < v.start_line || v.start_line < 1) {
                throw SpecFormatError("manifest entry " + v.id + " has an invalid line range");
            }
            if (!ids.insert(v.id).second) {
                throw SpecFormatError("duplicate manifest id " + v.id);
            }
            manifest.entries.push_back(std::move(v));
        }
    } catch (const json::exception& e) {
        throw SpecFormatError(std::string("malformed vulnerability manifest: ") + e.what());
    }
    return manifest;
}

KnownVulnManifest KnownVulnManifest::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string KnownVulnManifest::serialize() const {
    json list = json::array();
    for (const auto& v : entries) {
        json e = {{"id", v.id},
                  {"file", v.file},
                  {"start_line", v.start_line},
                  {"end_line", v.end_line},
                  {"class", v.vulnerability_class}};
        if (!v.source_method.empty()) {
            e["source_method"] = v.source_method;
        }
        if (!v.sink_method.empty()) {
            e["sink_method"] = v.sink_method;
        }
        list.push_back(std::move(e));
    }
    return json{{"version", 1}, {"vulnerabilities", list}}.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::string normalize_uri(std::string path) {
    if (path.starts_with("file://")) {
        path.erase(0, 7);
    }
    while (path.starts_with("./")) {
        path.erase(0, 2);
    }
    return path;
}

bool same_file(const std::string& finding, const std::string& known) {
    const auto a = normalize_uri(finding);
    const auto b = normalize_uri(known);
    if (a == b) {
        return true;
    }
    // absolute or differently rooted URIs: match on a path-component suffix
    const auto& longer = a.size() > b.size() ? a : b;
    const auto& shorter = a.size() > b.size() ? b : a;
    return longer.ends_with(shorter) && longer[longer.size() - shorter.size() - 1] == '/';
}

} // namespace

Metrics compute_metrics(const std::vector<RuleStatus>& statuses, const std::vector<Finding>& findings,
                        const std::optional<KnownVulnManifest>& manifest) {
    Metrics m;
    for (const auto s : statuses) {
        switch (s) {
        case RuleStatus::Compiled:
            ++m.compiled;
            ++m.total_pairs;
            break;
        case RuleStatus::Invalid:
            ++m.total_pairs;
            break;
        case RuleStatus::Aborted:
            ++m.aborted;
            break;
        }
    }
    m.correctness = Rate{m.compiled, m.total_pairs};
    if (manifest) {
        m.known_total = static_cast<std::int64_t>(manifest->entries.size());
        std::int64_t detected = 0;
        for (const auto& v : manifest->entries) {
            const bool hit = std::any_of(findings.begin(), findings.end(), [&](const Finding& f) {
                return same_file(f.file, v.file) && f.start_line <= v.end_line && v.start_line <= f.end_line;
            });
            if (hit) {
                ++detected;
                m.detected_ids.push_back(v.id);
            }
        }
        std::sort(m.detected_ids.begin(), m.detected_ids.end());
        m.detected = detected;
        m.detection = Rate{detected, *m.known_total};
    }
    return m;
}

Metrics compute_metrics(const std::vector<RuleArtifact>& artifacts, const std::vector<Finding>& findings,
                        const std::optional<KnownVulnManifest>& manifest) {
    std::vector<RuleStatus> statuses;
    statuses.reserve(artifacts.size());
    for (const auto& a : artifacts) {
        statuses.push_back(a.status);
    }
    return compute_metrics(statuses, findings, manifest);
}

PipelineReport build_report(json config, const std::vector<RuleArtifact>& artifacts, std::vector<Finding> findings,
                            const std::optional<KnownVulnManifest>& manifest, std::vector<std::string> warnings) {
    PipelineReport report;
    report.config = std::move(config);
    report.metrics = compute_metrics(artifacts, findings, manifest);
    for (const auto& a : artifacts) {
        report.pairs.push_back({a.pair.id(), a.pair.vulnerability_class, a.status, a.attempts});
    }
    std::sort(report.pairs.begin(), report.pairs.end(),
              [](const PairSummary& a, const PairSummary& b) { return a.pair_id < b.pair_id; });
    report.findings = std::move(findings);
    report.warnings = std::move(warnings);
    return report;
}

// ---------------------------------------------------------------------------
// Serialization

ReportFormat report_format_from_string(std::string_view text) {
    if (text == "json") {
        return ReportFormat::Json;
    }
    if (text == "text") {
        return ReportFormat::Text;
    }
    if (text == "sarif") {
        return ReportFormat::Sarif;
    }
    throw ConfigError("unknown report format: " + std::string(text));
}

namespace {

json rate_json(const Rate& r) {
    return {{"numerator", r.numerator}, {"denominator", r.denominator}, {"percent", r.str()}};
}

Rate rate_from_json(const json& doc) {
    return {doc.at("numerator").get<std::int64_t>(), doc.at("denominator").get<std::int64_t>()};
}

} // namespace

json to_json(const PipelineReport& report) {
    json metrics = {{"total_pairs", report.metrics.total_pairs},
                    {"compiled", report.metrics.compiled},
                    {"aborted", report.metrics.aborted},
                    {"correctness_rate", rate_json(report.metrics.correctness)}};
    if (report.metrics.detection) {
        metrics["known_total"] = *report.metrics.known_total;
        metrics["detected"] = *report.metrics.detected;
        metrics["detection_rate"] = rate_json(*report.metrics.detection);
        metrics["detected_ids"] = report.metrics.detected_ids;
    }
    json pairs = json::array();
    for (const auto& p : report.pairs) {
        pairs.push_back({{"pair", p.pair_id},
                         {"vulnerability_class", p.vulnerability_class},
                         {"status", to_string(p.status)},
                         {"attempts", p.attempts}});
    }
    json findings = json::array();
    for (const auto& f : report.findings) {
        findings.push_back(to_json(f));
    }
    return {{"version", 1},
            {"config", report.config},
            {"metrics", metrics},
            {"pairs", pairs},
            {"findings", findings},
            {"warnings", report.warnings}};
}

PipelineReport report_from_json(const json& doc) {
    PipelineReport report;
    report.config = doc.at("config");
    const auto& m = doc.at("metrics");
    report.metrics.total_pairs = m.at("total_pairs").get<std::int64_t>();
    report.metrics.compiled = m.at("compiled").get<std::int64_t>();
    report.metrics.aborted = m.at("aborted").get<std::int64_t>();
    report.metrics.correctness = rate_from_json(m.at("correctness_rate"));
    if (m.contains("detection_rate")) {
        report.metrics.known_total = m.at("known_total").get<std::int64_t>();
        report.metrics.detected = m.at("detected").get<std::int64_t>();
        report.metrics.detection = rate_from_json(m.at("detection_rate"));
        report.metrics.detected_ids = m.at("detected_ids").get<std::vector<std::string>>();
    }
    for (const auto& p : doc.at("pairs")) {
        report.pairs.push_back({p.at("pair").get<std::string>(), p.at("vulnerability_class").get<std::string>(),
                                rule_status_from_string(p.at("status").get<std::string>()),
                                p.at("attempts").get<int>()});
    }
    for (const auto& f : doc.at("findings")) {
        report.findings.push_back(finding_from_json(f));
    }
    report.warnings = doc.at("warnings").get<std::vector<std::string>>();
    return report;
}

PipelineReport parse_report(const std::string& text) {
    try {
        return report_from_json(json::parse(text));
    } catch (const json::exception& e) {
        throw SpecFormatError(std::string("malformed report: ") + e.what());
    }
}

namespace {

std::string render_text(const PipelineReport& r) {
    std::ostringstream out;
    const auto& m = r.metrics;
    auto row = [&](std::string_view label, const std::string& value) {
        out << "  " << label << std::string(18 - label.size(), ' ') << value << "\n";
    };
    auto pct = [](const Rate& rate) {
        const auto s = rate.str();
        return (s == kUndefinedRate ? s : s + "%") + " (" + std::to_string(rate.numerator) + "/" +
               std::to_string(rate.denominator) + ")";
    };
    out << "qlforge report\n\nMetrics\n";
    row("pairs", std::to_string(m.total_pairs));
    row("compiled", std::to_string(m.compiled));
    row("aborted", std::to_string(m.aborted));
    row("correct rate", pct(m.correctness));
    if (m.detection) {
        row("known vulns", std::to_string(*m.known_total));
        row("detected", std::to_string(*m.detected));
        row("detection rate", pct(*m.detection));
    }
    out << "\nRules (" << r.pairs.size() << ")\n";
    for (const auto& p : r.pairs) {
        out << "  " << p.pair_id << "  " << to_string(p.status) << "  attempts=" << p.attempts << "  "
            << p.vulnerability_class << "\n";
    }
    out << "\nFindings (" << r.findings.size() << ")\n";
    for (const auto& f : r.findings) {
        out << "  " << f.file << ":" << f.start_line;
        if (f.end_line != f.start_line) {
            out << "-" << f.end_line;
        }
        out << "  " << f.pair_id << "  " << f.message << "\n";
    }
    if (!r.warnings.empty()) {
        out << "\nWarnings (" << r.warnings.size() << ")\n";
        for (const auto& w : r.warnings) {
            out << "  " << w << "\n";
        }
    }
    return out.str();
}

json render_sarif(const PipelineReport& r) {
    std::map<std::string, std::string> rule_classes;
    for (const auto& p : r.pairs) {
        rule_classes[p.pair_id] = p.vulnerability_class;
    }
    for (const auto& f : r.findings) {
        rule_classes.try_emplace(f.pair_id, "unspecified");
    }
    json rules = json::array();
    std::map<std::string, int> rule_index;
    for (const auto& [id, cls] : rule_classes) {
        rule_index[id] = static_cast<int>(rules.size());
        rules.push_back({{"id", id},
                         {"name", "qlforge/" + id},
                         {"shortDescription", {{"text", cls + " (" + id + ")"}}},
                         {"properties", {{"tags", {"security", cls}}}}});
    }
    json results = json::array();
    for (const auto& f : r.findings) {
        json region = {{"startLine", f.start_line}, {"endLine", f.end_line}};
        json physical = {{"artifactLocation", {{"uri", f.file}}}, {"region", region}};
        json location = {{"physicalLocation", physical}};
        results.push_back({{"ruleId", f.pair_id},
                           {"ruleIndex", rule_index.at(f.pair_id)},
                           {"level", "error"},
                           {"message", {{"text", f.message}}},
                           {"locations", json::array({location})}});
    }
    json driver = {{"name", "qlforge"}, {"version", "0.1.0"}, {"rules", rules}};
    json run = {{"tool", {{"driver", driver}}}, {"results", results}};
    return {{"$schema", "https://json.schemastore.org/sarif-2.1.0.json"},
            {"version", "2.1.0"},
            {"runs", json::array({run})}};
}

} // namespace

std::string render_report(const PipelineReport& report, ReportFormat format) {
    switch (format) {
    case ReportFormat::Json:
        return to_json(report).dump(2) + "\n";
    case ReportFormat::Text:
        return render_text(report);
    case ReportFormat::Sarif:
        return render_sarif(report).dump(2) + "\n";
    }
    return {};
}

void emit_report(const PipelineReport& report, ReportFormat format, const std::filesystem::path& file) {
    write_file_atomic(file, render_report(report, format));
}

} // namespace qlforge
