#include "qlforge/error.hpp"
#include "qlforge/fixture.hpp"
#include "qlforge/rulegen.hpp"
#include "qlforge/util.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace qlforge;
using nlohmann::json;

namespace {

const std::string kSqlPair = "2afe1614d9622609-395d2438925b8cb2";
const std::string kPathPair = "fdaccf297de4ebab-387a5f5584e42eee";
const std::string kCmdPair = "2afe1614d9622609-5ccdd67c2b5bdfb5";

const RecordIndex& fixture_records() {
    static const RecordIndex index = [] {
        FixtureBackend backend;
        return index_records(dedupe(backend.enumerate(FixtureLayout{test::fixture_dir()}.project())));
    }();
    return index;
}

SourceSinkPair fixture_pair(const std::string& id, const std::string& cls) {
    const auto dash = id.find('-');
    return {id.substr(0, dash), id.substr(dash + 1), cls, "seeded", "source 3/3 votes, sink 3/3 votes"};
}

std::string line(const std::string& stage, const std::string& response) {
    return json{{"stage", stage}, {"response", response}}.dump() + "\n";
}

const std::string kDraft = "```ql\nimport java\npredicate isSource() { any() }\npredicate isSink() { any() }\n```";

MockCompiler failing(int k, const std::string& diagnostics = "line 3 col 7: cannot resolve type") {
    MockCompileScript s;
    s.fail_count = k;
    s.diagnostics = diagnostics;
    return MockCompiler(s, {});
}

} // namespace

TEST(Rulegen, RepairLoopStateMachine) {
    for (int k = 0; k <= 7; ++k) {
        test::TempDir dir;
        auto compiler = failing(k);
        compiler.prepare_workspace(dir.path());
        Gateway gw(test::mock_client(line("write", kDraft) + line("repair", "fix the type")), nullptr,
                   {}, test::no_sleep_retry());
        const auto art = generate_rule(fixture_pair(kSqlPair, "sql-injection"), fixture_records(), compiler, gw,
                                       dir.path(), {5, std::chrono::milliseconds{120000}});
        const int expected_attempts = std::min(k + 1, 5);
        EXPECT_EQ(art.attempts, expected_attempts) << "k=" << k;
        EXPECT_EQ(art.status, k < 5 ? RuleStatus::Compiled : RuleStatus::Invalid) << "k=" << k;
        EXPECT_EQ(compiler.compile_calls(), static_cast<std::size_t>(expected_attempts));
        int writes = 0;
        int repairs = 0;
        for (const auto& e : gw.transcript().entries()) {
            writes += e.stage == Stage::Write;
            repairs += e.stage == Stage::Repair;
        }
        EXPECT_EQ(writes, expected_attempts);
        EXPECT_EQ(repairs, k < 5 ? k : 4);
        EXPECT_EQ(replay_status(art.transcript, 5), art.status);
        for (int i = 0; i < art.attempts; ++i) {
            EXPECT_EQ(art.transcript[i].draft.attempt, i + 1);
            EXPECT_EQ(art.transcript[i].advice.has_value(), i + 1 < art.attempts);
        }
        EXPECT_EQ(art.final_rule.empty(), k >= 5);
    }
}

TEST(Rulegen, RevisionCarriesAdvice) {
    test::TempDir dir;
    auto compiler = failing(1);
    compiler.prepare_workspace(dir.path());
    Gateway gw(test::mock_client(line("write", kDraft) + line("repair", "ADVICE-TOKEN-42")), nullptr);
    const auto art = generate_rule(fixture_pair(kSqlPair, "sql-injection"), fixture_records(), compiler, gw,
                                   dir.path());
    ASSERT_EQ(art.attempts, 2);
    const auto entries = gw.transcript().entries();
    ASSERT_EQ(entries.size(), 3u);
    EXPECT_EQ(entries[0].stage, Stage::Write);
    EXPECT_EQ(entries[1].stage, Stage::Repair);
    EXPECT_NE(entries[1].request.text().find("cannot resolve type"), std::string::npos);
    EXPECT_NE(entries[2].request.text().find("ADVICE-TOKEN-42"), std::string::npos);
    EXPECT_NE(entries[0].request.text().find("Pair id: " + kSqlPair), std::string::npos);
}

TEST(Rulegen, EmptyDraftCountsAsFailedAttempt) {
    test::TempDir dir;
    auto compiler = failing(0);
    compiler.prepare_workspace(dir.path());
    Gateway gw(test::mock_client(line("write", "   ") + line("repair", "")), nullptr);
    const auto art = generate_rule(fixture_pair(kSqlPair, "sql-injection"), fixture_records(), compiler, gw,
                                   dir.path(), {3, std::chrono::milliseconds{1000}});
    EXPECT_EQ(art.status, RuleStatus::Invalid);
    EXPECT_EQ(art.attempts, 3);
    EXPECT_EQ(compiler.compile_calls(), 0u);
    // empty advice falls back to the first diagnostic
    EXPECT_EQ(*art.transcript[0].advice, std::string(kFallbackAdvice) + ": writer produced an empty draft");
}

TEST(Rulegen, DraftWithoutPredicatesRejected) {
    test::TempDir dir;
    auto compiler = failing(0);
    compiler.prepare_workspace(dir.path());
    Gateway gw(test::mock_client(line("write", "import java\nselect 1")), nullptr);
    const auto art = generate_rule(fixture_pair(kSqlPair, "sql-injection"), fixture_records(), compiler, gw,
                                   dir.path(), {2, std::chrono::milliseconds{1000}});
    EXPECT_EQ(art.status, RuleStatus::Invalid);
    EXPECT_EQ(art.transcript[0].result.diagnostics.at(0).message,
              "query does not define isSource and isSink predicates");
}

TEST(Rulegen, HugeDiagnosticsAreCappedInRepairPrompt) {
    test::TempDir dir;
    auto compiler = failing(1, std::string(50 * 1024, 'E'));
    compiler.prepare_workspace(dir.path());
    Gateway gw(test::mock_client(line("write", kDraft) + line("repair", "shorter")), nullptr);
    const auto art = generate_rule(fixture_pair(kSqlPair, "sql-injection"), fixture_records(), compiler, gw,
                                   dir.path());
    EXPECT_EQ(art.status, RuleStatus::Compiled);
    const auto entries = gw.transcript().entries();
    ASSERT_EQ(entries.at(1).stage, Stage::Repair);
    const auto text = entries[1].request.text();
    EXPECT_LT(text.size(), 20u * 1024);
    EXPECT_NE(text.find(std::string(4000, 'E')), std::string::npos);
    EXPECT_EQ(text.find(std::string(kDiagnosticsByteCap + 1, 'E')), std::string::npos);
    std::size_t total = 0;
    for (const auto& d : art.transcript[0].result.diagnostics) {
        total += d.message.size();
    }
    EXPECT_LE(total, kDiagnosticsByteCap);
}

TEST(Rulegen, DiagnosticsRendering) {
    std::vector<Diagnostic> many;
    for (int i = 0; i < 100; ++i) {
        many.push_back({"problem " + std::to_string(i), i + 1, 2});
    }
    EXPECT_EQ(cap_diagnostics(many).size(), kMaxDiagnostics);
    const auto text = render_diagnostics(many);
    EXPECT_LE(text.size(), kDiagnosticsByteCap);
    EXPECT_NE(text.find("1:2: problem 0\n"), std::string::npos);
    EXPECT_NE(text.find("[diagnostics truncated]"), std::string::npos);
    EXPECT_EQ(render_diagnostics({{"plain", std::nullopt, std::nullopt}}), "plain\n");
}

TEST(Rulegen, ReplayStatus) {
    const TranscriptStep bad{{"p", "x", 1}, {CompileStatus::Error, {}, {}}, "a"};
    const TranscriptStep good{{"p", "x", 2}, {CompileStatus::Ok, {}, {}}, std::nullopt};
    EXPECT_EQ(replay_status({bad, good}, 5), RuleStatus::Compiled);
    EXPECT_EQ(replay_status({bad, bad}, 2), RuleStatus::Invalid);
    EXPECT_EQ(replay_status({bad}, 2), RuleStatus::Aborted);
    EXPECT_EQ(replay_status({}, 5), RuleStatus::Aborted);
}

TEST(Rulegen, ExtractRuleText) {
    EXPECT_EQ(extract_rule_text("intro\n```ql\nselect 1\n```\n```\nother\n```"), "select 1\n");
    EXPECT_EQ(extract_rule_text("```\nselect 2\n```"), "select 2\n");
    EXPECT_EQ(extract_rule_text("  select 3  \n"), "select 3\n");
}

TEST(Rulegen, TemplateRulesFindExactlyTheSeededFlows) {
    const auto project = FixtureLayout{test::fixture_dir()}.project();
    struct Case {
        std::string pair;
        std::string cls;
        std::string file;
        int line;
    };
    const std::vector<Case> cases{
        {kSqlPair, "sql-injection", "src/main/java/com/example/shop/web/UserController.java", 23},
        {kPathPair, "path-traversal", "src/main/java/com/example/shop/web/UploadController.java", 15},
        {kCmdPair, "command-injection", "src/main/java/com/example/shop/admin/DiagnosticsController.java", 9},
    };
    MockCompiler compiler;
    for (const auto& c : cases) {
        test::TempDir dir;
        const auto rule = render_template_rule(fixture_pair(c.pair, c.cls), fixture_records());
        EXPECT_NE(rule.find("isSource"), std::string::npos);
        EXPECT_NE(rule.find("isSink"), std::string::npos);
        write_file_atomic(dir / "rule.ql", rule);
        const auto findings = compiler.run(c.pair, dir / "rule.ql", project);
        ASSERT_EQ(findings.size(), 1u) << c.pair;
        EXPECT_EQ(findings[0].file, c.file);
        EXPECT_EQ(findings[0].start_line, c.line);
        EXPECT_EQ(findings[0].pair_id, c.pair);
    }
}

TEST(Rulegen, RuleEndpointsAndLineScan) {
    const std::string rule = R"q(
predicate isSource(DataFlow::Node node) { exists(MethodCall call | call.getMethod().hasName("readLine") and node.asExpr() = call) }
predicate isSink(DataFlow::Node node) { exists(ClassInstanceExpr c | c.getConstructedType().hasQualifiedName("java.io", "File") and node.asExpr() = c.getAnArgument()) }
)q";
    const auto ep = rule_endpoints(rule);
    EXPECT_EQ(ep.source_methods, std::vector<std::string>{"readLine"});
    EXPECT_EQ(ep.sink_constructors, std::vector<std::string>{"File"});

    const std::string java = R"j(class A {
  void a(BufferedReader r) {
    String name = r.readLine();
    String full = "/tmp/" + name;
    new File(full);
    new File("constant");
  }
  void b() {
    new File(full); // other method
    // new File(r.readLine());
    new File(r.readLine());
  }
})j";
    const auto findings = scan_taint_flows(java, "A.java", ep, "p");
    ASSERT_EQ(findings.size(), 2u);
    EXPECT_EQ(findings[0].start_line, 5);
    EXPECT_EQ(findings[1].start_line, 11);
}

TEST(Rulegen, ArtifactStoreRoundTrip) {
    test::TempDir dir;
    std::mt19937_64 rng(77);
    std::vector<RuleArtifact> arts;
    for (int i = 0; i < 6; ++i) {
        RuleArtifact a;
        a.pair = {test::random_word(rng, 16, 16), test::random_word(rng, 16, 16), "cls",
                  test::random_text(rng, 40), "source 3/3 votes, sink 2/3 votes"};
        const int n = 1 + static_cast<int>(rng() % 4);
        for (int k = 1; k <= n; ++k) {
            TranscriptStep s;
            s.draft = {a.pair.id(), test::random_text(rng, 200), k};
            const bool last = k == n;
            s.result.status = last && i % 2 == 0 ? CompileStatus::Ok : CompileStatus::Error;
            if (!s.result.ok()) {
                s.result.diagnostics = {{test::random_text(rng, 50), k, std::nullopt}, {"x", std::nullopt, std::nullopt}};
                if (!last) {
                    s.advice = test::random_text(rng, 60);
                }
            }
            s.result.elapsed = std::chrono::milliseconds(k * 3);
            a.transcript.push_back(s);
        }
        a.attempts = n;
        a.status = replay_status(a.transcript, n);
        if (a.status == RuleStatus::Compiled) {
            a.final_rule = a.transcript.back().draft.text;
        }
        if (i == 5) {
            a.status = RuleStatus::Aborted;
            a.abort_reason = "compiler unavailable: gone";
        }
        store_artifact(dir.path() / a.pair.id(), a);
        EXPECT_EQ(load_artifact(dir.path() / a.pair.id()), a);
        arts.push_back(a);
    }
    std::sort(arts.begin(), arts.end(), [](const auto& a, const auto& b) { return a.pair.id() < b.pair.id(); });
    EXPECT_EQ(load_store(dir.path()), arts);
}

TEST(Rulegen, FindingsRoundTripAndSarif) {
    const std::vector<Finding> findings{{"p1", "a/B.java", 3, 3, "m \"q\""}, {"p2", "a/C.java", 1, 4, "é"}};
    EXPECT_EQ(parse_findings(serialize_findings(findings)), findings);

    const auto sarif = json::parse(R"({"version":"2.1.0","runs":[{"results":[
        {"message":{"text":"flow"},"locations":[{"physicalLocation":{"artifactLocation":{"uri":"src/X.java"},
         "region":{"startLine":7,"endLine":9}}}]},
        {"message":{"text":"one"},"locations":[{"physicalLocation":{"artifactLocation":{"uri":"Y.java"},
         "region":{"startLine":2}}}]}]}]})");
    const auto parsed = findings_from_sarif(sarif, "pp");
    ASSERT_EQ(parsed.size(), 2u);
    EXPECT_EQ(parsed[0], (Finding{"pp", "src/X.java", 7, 9, "flow"}));
    EXPECT_EQ(parsed[1].end_line, 2);
}

TEST(Rulegen, CodeqlDiagnosticsParsing) {
    const auto diags = CodeqlCompiler::parse_diagnostics(
        "Compiling query plan for /w/rule.ql.\n"
        "ERROR: could not resolve type MethodAccess (/w/rule.ql:12,7-19)\n"
        "ERROR: something odd\n");
    ASSERT_EQ(diags.size(), 2u);
    EXPECT_EQ(diags[0].message, "could not resolve type MethodAccess");
    EXPECT_EQ(diags[0].line, 12);
    EXPECT_EQ(diags[0].column, 7);
    EXPECT_FALSE(diags[1].line.has_value());
}

TEST(Rulegen, ScanDedupesAndSkipsUncompiled) {
    test::TempDir dir;
    const auto project = FixtureLayout{test::fixture_dir()}.project();
    RuleArtifact good;
    good.pair = fixture_pair(kSqlPair, "sql-injection");
    good.status = RuleStatus::Compiled;
    good.final_rule = render_template_rule(good.pair, fixture_records());
    RuleArtifact bad = good;
    bad.pair = fixture_pair(kCmdPair, "command-injection");
    bad.status = RuleStatus::Invalid;
    bad.final_rule.clear();
    MockCompiler compiler;
    const auto result = scan({good, good, bad}, project, compiler, dir.path());
    EXPECT_EQ(result.findings.size(), 1u);
    EXPECT_TRUE(result.failures.empty());
    EXPECT_EQ(compiler.run_calls(), 2u);
}

TEST(Rulegen, MockCompilerScript) {
    const auto c = MockCompiler::parse(
        R"({"version":1,"default":{"fail_count":0},"pairs":{"p":{"results":["timeout","error","ok"],"diagnostics":"bad line 4 col 2"}}})");
    (void)c;
    EXPECT_THROW(MockCompiler::parse("{"), ConfigError);
    EXPECT_THROW(MockCompiler::parse(R"({"version":1,"pairs":{"p":{"results":["maybe"]}}})"), ConfigError);

    test::TempDir dir;
    auto compiler = MockCompiler::parse(
        R"({"version":1,"pairs":{"p":{"results":["timeout","error","ok"],"diagnostics":"bad line 4 col 2"}}})");
    compiler.prepare_workspace(dir.path());
    EXPECT_TRUE(std::filesystem::exists(dir / "qlpack.yml"));
    const RuleDraft d1{"p", "isSource isSink", 1};
    EXPECT_EQ(execute_rule(d1, compiler, dir.path()).status, CompileStatus::Timeout);
    const auto r2 = execute_rule({"p", "isSource isSink", 2}, compiler, dir.path());
    EXPECT_EQ(r2.status, CompileStatus::Error);
    EXPECT_EQ(r2.diagnostics.at(0).line, 4);
    EXPECT_EQ(r2.diagnostics.at(0).column, 2);
    EXPECT_EQ(execute_rule({"p", "isSource isSink", 3}, compiler, dir.path()).status, CompileStatus::Ok);
    EXPECT_EQ(execute_rule({"p", "isSource isSink", 9}, compiler, dir.path()).status, CompileStatus::Ok);
    EXPECT_EQ(read_file(dir / "rule.ql"), "isSource isSink");
}

TEST(Rulegen, SlowCompileBecomesTimeout) {
    test::TempDir dir;
    MockCompileScript s;
    s.delay = std::chrono::milliseconds(50);
    MockCompiler compiler(s, {});
    compiler.prepare_workspace(dir.path());
    const auto r = execute_rule({"p", "isSource isSink", 1}, compiler, dir.path(), std::chrono::milliseconds(10));
    EXPECT_EQ(r.status, CompileStatus::Timeout);
}

TEST(Rulegen, UnavailableCompilerAborts) {
    test::TempDir dir;
    CodeqlCompiler compiler("/nonexistent/codeql");
    Gateway gw(test::mock_client(line("write", kDraft)), nullptr);
    const auto art = generate_rule(fixture_pair(kSqlPair, "sql-injection"), fixture_records(), compiler, gw,
                                   dir.path());
    EXPECT_EQ(art.status, RuleStatus::Aborted);
    EXPECT_FALSE(art.abort_reason.empty());
}
