// Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//
//   qlforge_acceptance [--known-fail N]...
//
// Exit status is nonzero when a criterion fails that was not declared with
// --known-fail.

#include "qlforge/classifier.hpp"
#include "qlforge/error.hpp"
#include "qlforge/extractor.hpp"
#include "qlforge/fixture.hpp"
#include "qlforge/pairer.hpp"
#include "qlforge/pipeline.hpp"
#include "qlforge/process.hpp"
#include "qlforge/report.hpp"
#include "qlforge/rulegen.hpp"
#include "qlforge/util.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace qlforge;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    enum Kind { Pass, Fail, Skip } kind = Pass;
    std::string detail;
};

class Check {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok) {
            failures_.push_back(what);
        }
    }
    Outcome outcome(std::string detail) const {
        if (failures_.empty()) {
            return {Outcome::Pass, std::move(detail)};
        }
        std::string joined;
        for (std::size_t i = 0; i < failures_.size() && i < 6; ++i) {
            joined += (i ? "; " : "") + failures_[i];
        }
        if (failures_.size() > 6) {
            joined += "; ... " + std::to_string(failures_.size() - 6) + " more";
        }
        return {Outcome::Fail, joined};
    }

private:
    std::vector<std::string> failures_;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt_seconds(double s) {
    std::ostringstream out;
    out.precision(3);
    out << std::fixed << s << "s";
    return out.str();
}

PipelineConfig fixture_config(const fs::path& out) {
    auto cfg = PipelineConfig::load(FixtureLayout{test::fixture_dir()}.config());
    cfg.output = out;
    return cfg;
}

// 1 ------------------------------------------------------------------------

Outcome metric_reproduction() {
    struct Row {
        const char* table;
        std::int64_t num;
        std::int64_t den;
        const char* published;
    };
    const std::vector<Row> rows{
        {"T1", 1347, 1924, "70.01"}, {"T1", 1452, 1924, "75.47"}, {"T1", 1749, 1924, "90.90"},
        {"T1", 1522, 1924, "79.10"}, {"T2", 29, 62, "46.80"},     {"T2", 41, 62, "66.10"},
        {"T2", 31, 62, "50.00"},     {"T2", 24, 62, "38.70"},
    };
    const auto start = Clock::now();
    Check check;
    for (const auto& row : rows) {
        std::string got;
        if (std::string(row.table) == "T1") {
            std::vector<RuleStatus> statuses(row.num, RuleStatus::Compiled);
            statuses.insert(statuses.end(), row.den - row.num, RuleStatus::Invalid);
            got = compute_metrics(statuses, {}, std::nullopt).correctness.str();
        } else {
            KnownVulnManifest manifest;
            std::vector<Finding> findings;
            for (std::int64_t i = 0; i < row.den; ++i) {
                const auto file = "src/V" + std::to_string(i) + ".java";
                manifest.entries.push_back({"K" + std::to_string(i), file, 10, 12, "cls", "", ""});
                if (i < row.num) {
                    findings.push_back({"p", file, 11, 11, "hit"});
                }
            }
            const auto m = compute_metrics(std::vector<RuleStatus>{}, findings, manifest);
            got = m.detection ? m.detection->str() : "missing";
        }
        check.expect(got == row.published, std::to_string(row.num) + "/" + std::to_string(row.den) + " -> " + got +
                                               " (published " + row.published + ")");
    }
    const auto elapsed = seconds_since(start);
    check.expect(elapsed < 1.0, "runtime " + fmt_seconds(elapsed));
    return check.outcome("8/8 rates match, " + fmt_seconds(elapsed));
}

// 2 ------------------------------------------------------------------------

Outcome voting_oracle() {
    const std::array<TaintLabel, 4> labels{TaintLabel::Source, TaintLabel::Sink, TaintLabel::Sanitizer,
                                           TaintLabel::None};
    const auto start = Clock::now();
    Check check;
    std::map<std::string, std::vector<Ballot>> ballots;
    std::map<std::string, std::pair<TaintLabel, bool>> expected;
    int n = 0;
    for (const auto a : labels) {
        for (const auto b : labels) {
            for (const auto c : labels) {
                const auto id = std::string(n < 10 ? "t0" : "t") + std::to_string(n);
                ++n;
                ballots[id] = {{0, "r0g0", a}, {1, "r1g0", b}, {2, "r2g0", c}};
                std::pair<TaintLabel, bool> oracle{TaintLabel::None, true};
                for (const auto l : labels) {
                    if ((a == l) + (b == l) + (c == l) >= 2) {
                        oracle = {l, false};
                    }
                }
                expected[id] = oracle;
            }
        }
    }
    const auto votes = tally_votes(ballots);
    check.expect(votes.size() == 64, "tallied " + std::to_string(votes.size()) + " triples");
    int ties = 0;
    for (const auto& v : votes) {
        const auto& [label, tie] = expected.at(v.api_id);
        ties += tie;
        check.expect(v.resolved == label && v.tie == tie, "triple " + v.api_id + " resolved " +
                                                              std::string(to_string(v.resolved)));
    }
    const auto elapsed = seconds_since(start);
    check.expect(elapsed < 1.0, "runtime " + fmt_seconds(elapsed));
    return check.outcome("64 triples (" + std::to_string(ties) + " all-distinct ties -> NONE), " +
                         fmt_seconds(elapsed));
}

// 3 ------------------------------------------------------------------------

Outcome grouping_properties() {
    const auto start = Clock::now();
    Check check;
    std::mt19937_64 rng(20240601);
    const ClassificationPrompt prompt;
    std::size_t groups = 0;
    for (int c = 0; c < 200; ++c) {
        const auto n = std::uniform_int_distribution<std::size_t>(1, 100)(rng);
        std::vector<ApiRecord> records;
        for (std::size_t i = 0; i < n; ++i) {
            records.push_back(test::random_record(rng, 600));
        }
        records = dedupe(records);
        std::size_t largest = 0;
        for (const auto& r : records) {
            largest = std::max(largest, ClassificationPrompt::block_tokens(r));
        }
        const auto budget = prompt.frame_tokens() + largest +
                            std::uniform_int_distribution<std::size_t>(0, 4000)(rng);
        const auto seed = rng();
        const auto tag = "case " + std::to_string(c);

        const auto plan = plan_groups(records, budget, seed, prompt);
        check.expect(plan == plan_groups(records, budget, seed, prompt), tag + ": plan not seed-deterministic");
        const auto index = index_records(records);
        std::map<std::string, std::set<int>> rounds;
        std::map<std::string, int> count;
        for (const auto& g : plan) {
            const auto text = build_classification_prompt(g, index, prompt);
            check.expect(estimate_tokens(text) <= budget, tag + ": group " + g.id + " over budget");
            for (const auto& m : g.members) {
                rounds[m].insert(g.round);
                ++count[m];
            }
        }
        for (const auto& r : records) {
            check.expect(count[r.id] == 3 && rounds[r.id].size() == 3,
                         tag + ": api " + r.id + " in " + std::to_string(count[r.id]) + " groups");
        }
        groups += plan.size();
    }
    const auto elapsed = seconds_since(start);
    check.expect(elapsed < 10.0, "runtime " + fmt_seconds(elapsed));
    return check.outcome("200 cases, " + std::to_string(groups) + " groups, " + fmt_seconds(elapsed));
}

// 4 ------------------------------------------------------------------------

Outcome repair_loop() {
    const auto start = Clock::now();
    Check check;
    const std::string pair_id = "2afe1614d9622609-395d2438925b8cb2";
    FixtureBackend backend;
    const auto records =
        index_records(dedupe(backend.enumerate(FixtureLayout{test::fixture_dir()}.project())));
    const SourceSinkPair pair{"2afe1614d9622609", "395d2438925b8cb2", "sql-injection", "", ""};
    const auto script =
        nlohmann::json{{"stage", "write"}, {"response", "```ql\npredicate isSource() { any() }\npredicate isSink() { any() }\n```"}}
            .dump() +
        "\n" + nlohmann::json{{"stage", "repair"}, {"response", "fix it"}}.dump() + "\n";
    for (int k = 0; k <= 7; ++k) {
        test::TempDir dir;
        MockCompileScript s;
        s.fail_count = k;
        MockCompiler compiler(s, {});
        compiler.prepare_workspace(dir.path());
        Gateway gw(test::mock_client(script), nullptr);
        const auto art = generate_rule(pair, records, compiler, gw, dir.path(), {5, std::chrono::milliseconds{120000}});
        int repairs = 0;
        int writes = 0;
        for (const auto& e : gw.transcript().entries()) {
            repairs += e.stage == Stage::Repair;
            writes += e.stage == Stage::Write;
        }
        const auto tag = "k=" + std::to_string(k);
        check.expect((art.status == RuleStatus::Compiled) == (k < 5), tag + ": status " + std::string(to_string(art.status)));
        check.expect(art.attempts == std::min(k + 1, 5), tag + ": attempts " + std::to_string(art.attempts));
        check.expect(repairs == std::min(k, 4), tag + ": repair calls " + std::to_string(repairs));
        // nothing after the first Ok: one write and one compile per attempt
        check.expect(writes == art.attempts &&
                         compiler.compile_calls() == static_cast<std::size_t>(art.attempts),
                     tag + ": extra calls after the loop ended");
    }
    const auto elapsed = seconds_since(start);
    check.expect(elapsed < 5.0, "runtime " + fmt_seconds(elapsed));
    return check.outcome("k=0..7 with MAX=5, " + fmt_seconds(elapsed));
}

// 5 ------------------------------------------------------------------------

Outcome end_to_end() {
    Check check;
    test::TempDir dir;
    const auto ini = FixtureLayout{test::fixture_dir()}.config().string();
    double slowest = 0;
    for (const char* run : {"run1", "run2"}) {
        const auto start = Clock::now();
        ProcessOptions opts;
        opts.timeout = std::chrono::seconds(60);
        const auto r = run_process({QLFORGE_CLI_PATH, "run", "--config", ini, "--out", (dir / run).string()}, opts);
        slowest = std::max(slowest, seconds_since(start));
        check.expect(r.exit_code == 0, std::string(run) + " exited " + std::to_string(r.exit_code) + ": " + r.err);
    }
    check.expect(slowest < 10.0, "slowest run " + fmt_seconds(slowest));
    const auto a = read_file(RunPaths{dir / "run1"}.report());
    const auto b = read_file(RunPaths{dir / "run2"}.report());
    check.expect(a == b, "report.json differs between runs");
    const auto report = parse_report(a);
    const auto manifest = KnownVulnManifest::load(FixtureLayout{test::fixture_dir()}.manifest());
    check.expect(report.findings.size() == manifest.entries.size(),
                 std::to_string(report.findings.size()) + " findings");
    check.expect(report.metrics.detected == static_cast<std::int64_t>(manifest.entries.size()),
                 "not every manifest entry detected");
    check.expect(report.metrics.total_pairs == 3 && report.metrics.correctness.str() == "100.00",
                 "correctness " + report.metrics.correctness.str() + " over " +
                     std::to_string(report.metrics.total_pairs));
    return check.outcome("3 findings, 100.00% over 3 pairs, identical reports, slowest " + fmt_seconds(slowest));
}

// 6 ------------------------------------------------------------------------

Outcome resume_equivalence() {
    Check check;
    test::TempDir dir;
    const auto reference = run_pipeline(fixture_config(dir / "full"));
    const auto expected = read_file(RunPaths{dir / "full"}.report());
    for (const auto* stage : kStages) {
        const auto cfg = fixture_config(dir / (std::string("cut-") + stage));
        RunOptions stop;
        stop.stop_after = stage;
        const bool last = std::string(stage) == kStages.back();
        check.expect(run_pipeline(cfg, stop).has_value() == last, std::string("did not stop after ") + stage);
        RunOptions resume;
        resume.resume = true;
        const auto resumed = run_pipeline(cfg, resume);
        check.expect(resumed && *resumed == *reference, std::string("report differs after resuming from ") + stage);
        check.expect(read_file(RunPaths{cfg.output}.report()) == expected,
                     std::string("report.json bytes differ after resuming from ") + stage);
    }
    return check.outcome("6 stage boundaries");
}

// 7 ------------------------------------------------------------------------

Outcome round_trips() {
    Check check;
    std::mt19937_64 rng(424242);
    const std::array<TaintLabel, 4> labels{TaintLabel::Source, TaintLabel::Sink, TaintLabel::Sanitizer,
                                           TaintLabel::None};
    for (int c = 0; c < 50; ++c) {
        const auto tag = "case " + std::to_string(c);
        std::vector<ApiRecord> records;
        const auto n = 1 + rng() % 30;
        for (std::size_t i = 0; i < n; ++i) {
            records.push_back(test::random_record(rng));
        }
        records = dedupe(records);
        check.expect(parse_spec_document(to_spec_document(records).text) == records, tag + ": spec document");

        std::vector<VoteRecord> votes;
        for (const auto& r : records) {
            VoteRecord v;
            v.api_id = r.id;
            for (int k = 0; k < 3; ++k) {
                v.ballots[k] = {k, "r" + std::to_string(k) + "g" + std::to_string(rng() % 9), labels[rng() % 4],
                                rng() % 1000, rng() % 5 == 0};
            }
            std::tie(v.resolved, v.tie) = majority(v.ballots[0].label, v.ballots[1].label, v.ballots[2].label);
            votes.push_back(v);
        }
        check.expect(parse_votes(serialize_votes(votes)) == votes, tag + ": votes");

        std::vector<SourceSinkPair> pairs;
        for (std::size_t i = 0; i + 1 < records.size(); i += 2) {
            pairs.push_back({records[i].id, records[i + 1].id, test::random_word(rng, 3, 15),
                             test::random_text(rng, 120), test::random_text(rng, 30)});
        }
        std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
            return std::tie(a.source_id, a.sink_id) < std::tie(b.source_id, b.sink_id);
        });
        check.expect(parse_pair_artifact(serialize_pairs(pairs)) == pairs, tag + ": pairs");

        PipelineReport report;
        report.config = {{"llm.model", test::random_text(rng, 30)}, {"classify.seed", rng()}};
        for (const auto& p : pairs) {
            report.pairs.push_back({p.id(), p.vulnerability_class, static_cast<RuleStatus>(rng() % 3),
                                    static_cast<int>(rng() % 6)});
            report.findings.push_back({p.id(), test::random_text(rng, 30), static_cast<int>(rng() % 50 + 1),
                                       static_cast<int>(rng() % 50 + 51), test::random_text(rng, 60)});
        }
        std::vector<RuleStatus> statuses;
        for (const auto& p : report.pairs) {
            statuses.push_back(p.status);
        }
        report.metrics = compute_metrics(statuses, report.findings, std::nullopt);
        report.warnings = {test::random_text(rng, 80)};
        check.expect(parse_report(render_report(report, ReportFormat::Json)) == report, tag + ": report");
    }
    return check.outcome("50 randomized instances each of specs, votes, pairs, reports");
}

// 8 ------------------------------------------------------------------------

Outcome codeql_integration() {
    fs::path codeql;
    try {
        codeql = resolve_codeql("");
    } catch (const BackendUnavailable& e) {
        return {Outcome::Skip, "codeql not available"};
    }
    Check check;
    test::TempDir dir;
    CodeqlCompiler compiler(codeql.string());
    try {
        compiler.prepare_workspace(dir.path());
    } catch (const CompilerUnavailable& e) {
        return {Outcome::Skip, std::string("codeql present but pack setup failed: ") + e.what()};
    }
    FixtureBackend backend;
    const auto records =
        index_records(dedupe(backend.enumerate(FixtureLayout{test::fixture_dir()}.project())));
    const SourceSinkPair pair{"2afe1614d9622609", "395d2438925b8cb2", "sql-injection", "", ""};
    const RuleDraft good{pair.id(), render_template_rule(pair, records), 1};
    const auto ok = execute_rule(good, compiler, dir.path(), std::chrono::minutes(10));
    check.expect(ok.ok(), "template rule did not compile: " +
                              (ok.diagnostics.empty() ? std::string("(no diagnostics)") : ok.diagnostics[0].message));
    const RuleDraft broken{pair.id(), good.text + "\npredicate broken() { undefinedThing(1) }\n", 2};
    const auto bad = execute_rule(broken, compiler, dir.path(), std::chrono::minutes(10));
    check.expect(bad.status == CompileStatus::Error && !bad.diagnostics.empty(), "broken rule not rejected");
    return check.outcome("template compiles, broken rule yields " + std::to_string(bad.diagnostics.size()) +
                         " diagnostic(s)");
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> known_fail;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--known-fail" && i + 1 < argc) {
            known_fail.insert(std::stoi(argv[++i]));
        } else {
            std::cerr << "usage: qlforge_acceptance [--known-fail N]...\n";
            return 2;
        }
    }

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"metric reproduction", metric_reproduction},
        {"voting oracle equivalence", voting_oracle},
        {"grouping property suite", grouping_properties},
        {"repair-loop state machine", repair_loop},
        {"end-to-end mock run", end_to_end},
        {"resume equivalence", resume_equivalence},
        {"round-trip suite", round_trips},
        {"codeql integration", codeql_integration},
    };

    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i + 1);
        Outcome outcome;
        try {
            outcome = criteria[i].second();
        } catch (const std::exception& e) {
            outcome = {Outcome::Fail, std::string("exception: ") + e.what()};
        }
        const char* word = outcome.kind == Outcome::Pass ? "PASS" : outcome.kind == Outcome::Fail ? "FAIL" : "SKIP";
        std::cout << word << " " << number << " " << criteria[i].first << ": " << outcome.detail;
        if (outcome.kind == Outcome::Fail) {
            if (known_fail.contains(number)) {
                std::cout << " [known]";
            } else {
                ++unexpected;
            }
        }
        std::cout << std::endl;
    }
    return unexpected == 0 ? 0 : 1;
}
