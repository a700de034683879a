#include "qlforge/error.hpp"
#include "qlforge/report.hpp"
#include "qlforge/util.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace qlforge;
using nlohmann::json;

namespace {

std::vector<RuleStatus> statuses(int compiled, int invalid, int aborted = 0) {
    std::vector<RuleStatus> out(compiled, RuleStatus::Compiled);
    out.insert(out.end(), invalid, RuleStatus::Invalid);
    out.insert(out.end(), aborted, RuleStatus::Aborted);
    return out;
}

KnownVulnManifest manifest() {
    return KnownVulnManifest::parse(R"({"version":1,"vulnerabilities":[
        {"id":"V1","file":"src/A.java","start_line":10,"end_line":20,"class":"sql-injection"},
        {"id":"V2","file":"src/B.java","start_line":5,"end_line":5,"class":"path-traversal"},
        {"id":"V3","file":"src/C.java","start_line":1,"end_line":3,"class":"command-injection"}]})");
}

PipelineReport random_report(std::mt19937_64& rng) {
    PipelineReport r;
    r.config = {{"llm.model", test::random_text(rng, 20)}, {"classify.budget", rng() % 10000}};
    for (int i = 0; i < 5; ++i) {
        r.pairs.push_back({test::random_word(rng, 10, 20), test::random_word(rng, 3, 12),
                           static_cast<RuleStatus>(rng() % 3), static_cast<int>(rng() % 6)});
        r.findings.push_back({r.pairs.back().pair_id, "src/" + test::random_word(rng, 2, 6) + ".java",
                              static_cast<int>(rng() % 100 + 1), static_cast<int>(rng() % 100 + 101),
                              test::random_text(rng, 40)});
        r.warnings.push_back(test::random_text(rng, 60));
    }
    r.metrics.total_pairs = 4;
    r.metrics.compiled = 3;
    r.metrics.aborted = 1;
    r.metrics.correctness = {3, 4};
    if (rng() % 2) {
        r.metrics.known_total = 3;
        r.metrics.detected = 2;
        r.metrics.detection = Rate{2, 3};
        r.metrics.detected_ids = {"A", "B"};
    }
    return r;
}

} // namespace

TEST(Report, RateRendering) {
    // frozen values from the round-half-up rule at two decimals
    EXPECT_EQ((Rate{1749, 1924}).str(), "90.90");
    EXPECT_EQ((Rate{1347, 1924}).str(), "70.01");
    EXPECT_EQ((Rate{1452, 1924}).str(), "75.47");
    EXPECT_EQ((Rate{1522, 1924}).str(), "79.11");
    EXPECT_EQ((Rate{41, 62}).str(), "66.13");
    EXPECT_EQ((Rate{24, 62}).str(), "38.71");
    EXPECT_EQ((Rate{31, 62}).str(), "50.00");
    EXPECT_EQ((Rate{1, 8}).str(), "12.50");
    EXPECT_EQ((Rate{1, 3}).str(), "33.33");
    EXPECT_EQ((Rate{2, 3}).str(), "66.67");
    EXPECT_EQ((Rate{3, 3}).str(), "100.00");
    EXPECT_EQ((Rate{0, 5}).str(), "0.00");
    EXPECT_EQ((Rate{0, 0}).str(), kUndefinedRate);
    EXPECT_FALSE((Rate{0, 0}).basis_points().has_value());
    EXPECT_EQ((Rate{1749, 1924}).basis_points(), 9090);
}

TEST(Report, CorrectnessExcludesAborted) {
    const auto m = compute_metrics(statuses(1749, 175, 12), {}, std::nullopt);
    EXPECT_EQ(m.total_pairs, 1924);
    EXPECT_EQ(m.compiled, 1749);
    EXPECT_EQ(m.aborted, 12);
    EXPECT_EQ(m.correctness.str(), "90.90");
    EXPECT_FALSE(m.detection.has_value());

    const auto empty = compute_metrics(std::vector<RuleStatus>{}, {}, std::nullopt);
    EXPECT_EQ(empty.correctness.str(), "undefined");
}

TEST(Report, DetectionByFileAndLineOverlap) {
    const std::vector<Finding> findings{
        {"p", "src/A.java", 20, 20, "edge"},            // touches V1's last line
        {"p", "/abs/checkout/src/B.java", 4, 4, "near"}, // right file, misses line 5
        {"p", "file:///x/src/C.java", 2, 2, "uri"},
        {"p", "other/src/A.javax", 12, 12, "wrong file"},
    };
    const auto m = compute_metrics(statuses(1, 0), findings, manifest());
    EXPECT_EQ(m.known_total, 3);
    EXPECT_EQ(m.detected, 2);
    EXPECT_EQ(m.detected_ids, (std::vector<std::string>{"V1", "V3"}));
    EXPECT_EQ(m.detection->str(), "66.67");
}

TEST(Report, ManifestValidation) {
    EXPECT_EQ(KnownVulnManifest::parse(manifest().serialize()), manifest());
    EXPECT_THROW(KnownVulnManifest::parse(R"({"version":1,"vulnerabilities":[
        {"id":"D","file":"a","start_line":1,"end_line":1,"class":"x"},
        {"id":"D","file":"b","start_line":1,"end_line":1,"class":"x"}]})"),
                 SpecFormatError);
    EXPECT_THROW(KnownVulnManifest::parse(R"({"version":1,"vulnerabilities":[
        {"id":"D","file":"a","start_line":5,"end_line":1,"class":"x"}]})"),
                 SpecFormatError);
    EXPECT_THROW(KnownVulnManifest::parse("[]"), SpecFormatError);
}

TEST(Report, JsonRoundTrip) {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 20; ++i) {
        const auto r = random_report(rng);
        EXPECT_EQ(parse_report(render_report(r, ReportFormat::Json)), r);
    }
}

TEST(Report, SarifHasOneRulePerPairAndOneResultPerFinding) {
    std::mt19937_64 rng(3);
    const auto r = random_report(rng);
    const auto sarif = json::parse(render_report(r, ReportFormat::Sarif));
    EXPECT_EQ(sarif.at("version"), "2.1.0");
    const auto& run = sarif.at("runs").at(0);
    EXPECT_EQ(run.at("tool").at("driver").at("rules").size(), r.pairs.size());
    ASSERT_EQ(run.at("results").size(), r.findings.size());
    const auto& loc = run.at("results").at(0).at("locations").at(0).at("physicalLocation");
    EXPECT_EQ(loc.at("artifactLocation").at("uri"), r.findings[0].file);
    EXPECT_EQ(loc.at("region").at("startLine"), r.findings[0].start_line);
}

TEST(Report, TextReport) {
    PipelineReport r;
    r.metrics = compute_metrics(statuses(2, 1, 1), {}, manifest());
    r.pairs = {{"a-b", "sql-injection", RuleStatus::Compiled, 2}};
    r.warnings = {"pair: something"};
    const auto text = render_report(r, ReportFormat::Text);
    EXPECT_EQ(text.rfind("qlforge report", 0), 0u);
    EXPECT_NE(text.find("66.67"), std::string::npos);
    EXPECT_NE(text.find("0.00"), std::string::npos);
    EXPECT_NE(text.find("a-b"), std::string::npos);
    EXPECT_NE(text.find("pair: something"), std::string::npos);
}

TEST(Report, EmitIsByteStable) {
    test::TempDir dir;
    std::mt19937_64 rng(8);
    const auto r = random_report(rng);
    for (const auto fmt : {ReportFormat::Json, ReportFormat::Text, ReportFormat::Sarif}) {
        emit_report(r, fmt, dir / "a");
        emit_report(r, fmt, dir / "b");
        EXPECT_EQ(read_file(dir / "a"), read_file(dir / "b"));
    }
    write_file_atomic(dir / "file", "x");
    EXPECT_THROW(emit_report(r, ReportFormat::Json, dir.path() / "file" / "report.json"), UnwritableOutput);
    EXPECT_THROW(report_format_from_string("xml"), ConfigError);
}
