#include "qlforge/error.hpp"
#include "qlforge/fixture.hpp"
#include "qlforge/pipeline.hpp"
#include "qlforge/process.hpp"
#include "qlforge/util.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace qlforge;
namespace fs = std::filesystem;

namespace {

PipelineConfig fixture_config(const fs::path& out) {
    auto cfg = PipelineConfig::load(FixtureLayout{test::fixture_dir()}.config());
    cfg.output = out;
    return cfg;
}

ProcessResult cli(const std::vector<std::string>& args) {
    std::vector<std::string> argv{QLFORGE_CLI_PATH};
    argv.insert(argv.end(), args.begin(), args.end());
    ProcessOptions opts;
    opts.timeout = std::chrono::seconds(60);
    return run_process(argv, opts);
}

} // namespace

TEST(Config, LoadResolvesRelativePaths) {
    const auto cfg = PipelineConfig::load(FixtureLayout{test::fixture_dir()}.config());
    EXPECT_EQ(fs::weakly_canonical(cfg.project), fs::weakly_canonical(test::fixture_dir() / "project"));
    ASSERT_TRUE(cfg.llm_script.has_value());
    EXPECT_TRUE(fs::exists(*cfg.llm_script));
    EXPECT_EQ(cfg.budget, 2500u);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.compiler, "mock");
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_FALSE(cfg.echo().contains("output.dir"));
    EXPECT_EQ(cfg.echo().at("classify.budget"), 2500);
}

TEST(Config, OverridesAndErrors) {
    test::TempDir dir;
    auto cfg = fixture_config(dir.path());
    cfg.set("classify.budget", "9000", dir.path());
    EXPECT_EQ(cfg.budget, 9000u);
    EXPECT_THROW(cfg.set("classify.nope", "1", dir.path()), ConfigError);
    EXPECT_THROW(cfg.set("classify.budget", "lots", dir.path()), ConfigError);

    auto zero = cfg;
    zero.set("classify.budget", "0", dir.path());
    EXPECT_THROW(zero.validate(), ConfigError);
    auto missing = cfg;
    missing.set("llm.mock_script", "absent.jsonl", dir.path());
    EXPECT_THROW(missing.validate(), ConfigError);
    auto iters = cfg;
    iters.set("rulegen.max_iters", "0", dir.path());
    EXPECT_THROW(iters.validate(), ConfigError);

    write_file_atomic(dir / "bad.ini", "[llm]\nmodel = x\n[mystery]\nkey = 1\n");
    EXPECT_THROW(PipelineConfig::load(dir / "bad.ini"), ConfigError);
    EXPECT_THROW(PipelineConfig::load(dir / "absent.ini"), ConfigError);
}

TEST(Pipeline, FixtureRunFindsSeededFlows) {
    test::TempDir dir;
    const auto report = run_pipeline(fixture_config(dir.path()));
    ASSERT_TRUE(report.has_value());
    EXPECT_EQ(report->metrics.total_pairs, 3);
    EXPECT_EQ(report->metrics.compiled, 3);
    EXPECT_EQ(report->metrics.correctness.str(), "100.00");
    EXPECT_EQ(report->findings.size(), 3u);
    EXPECT_EQ(report->metrics.detected, 3);
    EXPECT_TRUE(report->warnings.empty());
    const RunPaths paths{dir.path()};
    for (const auto& p : {paths.specs(), paths.votes(), paths.pairs(), paths.findings(), paths.report(),
                          paths.transcript(), paths.timings()}) {
        EXPECT_TRUE(fs::exists(p)) << p;
    }
    for (const auto* stage : kStages) {
        EXPECT_TRUE(fs::exists(paths.stage_marker(stage))) << stage;
    }
    EXPECT_EQ(report_from_run(dir.path()), *report);
    EXPECT_EQ(read_file(paths.report()).find("elapsed"), std::string::npos);
}

TEST(Pipeline, ResumeAfterEachStageMatches) {
    test::TempDir base;
    const auto reference = run_pipeline(fixture_config(base / "full"));
    ASSERT_TRUE(reference);
    const auto expected = read_file(RunPaths{base / "full"}.report());
    for (const auto* stage : kStages) {
        const auto out = base / (std::string("stop-") + stage);
        const auto cfg = fixture_config(out);
        RunOptions stop;
        stop.stop_after = stage;
        const auto partial = run_pipeline(cfg, stop);
        // stopping after the last stage is a completed run
        EXPECT_EQ(partial.has_value(), std::string(stage) == "report") << stage;
        RunOptions resume;
        resume.resume = true;
        const auto resumed = run_pipeline(cfg, resume);
        ASSERT_TRUE(resumed) << stage;
        EXPECT_EQ(*resumed, *reference) << stage;
        EXPECT_EQ(read_file(RunPaths{out}.report()), expected) << stage;
    }
}

TEST(Pipeline, EmptyProjectYieldsEmptyReport) {
    test::TempDir dir;
    fs::create_directories(dir / "empty");
    auto cfg = fixture_config(dir / "out");
    cfg.project = dir / "empty";
    cfg.manifest.reset();
    const auto report = run_pipeline(cfg);
    ASSERT_TRUE(report);
    EXPECT_EQ(report->metrics.total_pairs, 0);
    EXPECT_EQ(report->metrics.correctness.str(), "undefined");
    EXPECT_TRUE(report->findings.empty());
}

TEST(Pipeline, MissingCodeqlFailsInExtract) {
    test::TempDir dir;
    auto cfg = fixture_config(dir.path());
    cfg.set("extract.backend", "codeql", dir.path());
    cfg.set("extract.codeql", "/nonexistent/codeql", dir.path());
    try {
        run_pipeline(cfg);
        FAIL() << "expected StageFailure";
    } catch (const StageFailure& e) {
        EXPECT_EQ(e.stage(), "extract");
    }
}

TEST(Cli, ExitCodes) {
    test::TempDir dir;
    const auto ini = FixtureLayout{test::fixture_dir()}.config().string();

    EXPECT_EQ(cli({"run", "--config", ini, "--out", (dir / "a").string(), "--set", "classify.budget=0"}).exit_code, 2);
    EXPECT_EQ(cli({"run", "--config", ini, "--out", (dir / "a").string(), "--set", "bogus"}).exit_code, 2);
    EXPECT_EQ(cli({"frobnicate"}).exit_code, 2);

    fs::create_directories(dir / "empty");
    EXPECT_EQ(cli({"extract", "--project", (dir / "empty").string(), "--out", (dir / "specs.json").string()})
                  .exit_code,
              4);

    const auto ok = cli({"run", "--config", ini, "--out", (dir / "run").string()});
    EXPECT_EQ(ok.exit_code, 0) << ok.err;
    EXPECT_NE(ok.out.find("100.00"), std::string::npos);

    const auto json_report = cli({"report", "--run", (dir / "run").string(), "--format", "json"});
    EXPECT_EQ(json_report.exit_code, 0);
    EXPECT_EQ(json_report.out, read_file(dir / "run" / "report.json"));

    const auto fail = cli({"run", "--config", ini, "--out", (dir / "b").string(), "--set",
                           "extract.backend=codeql", "--set", "extract.codeql=/nonexistent/codeql"});
    EXPECT_EQ(fail.exit_code, 3);
    EXPECT_NE(fail.err.find("extract"), std::string::npos);
}

TEST(Cli, StagewiseCommandsChain) {
    test::TempDir dir;
    const FixtureLayout fx{test::fixture_dir()};
    const auto d = [&](const char* name) { return (dir / name).string(); };
    const std::vector<std::string> llm{"--llm", "mock", "--mock-script", fx.llm_script().string()};
    auto with = [&](std::vector<std::string> args, bool add_llm) {
        if (add_llm) {
            args.insert(args.end(), llm.begin(), llm.end());
        }
        return cli(args);
    };
    ASSERT_EQ(with({"extract", "--project", fx.project().string(), "--out", d("specs.json")}, false).exit_code, 0);
    ASSERT_EQ(with({"classify", "--specs", d("specs.json"), "--budget", "2500", "--seed", "7", "--out",
                    d("votes.json")},
                   true)
                  .exit_code,
              0);
    ASSERT_EQ(with({"pair", "--votes", d("votes.json"), "--specs", d("specs.json"), "--out", d("pairs.json")}, true)
                  .exit_code,
              0);
    const auto gen = with({"generate", "--pairs", d("pairs.json"), "--specs", d("specs.json"), "--compiler", "mock",
                           "--mock-compiler", fx.compiler_script().string(), "--out", d("rules")},
                          true);
    ASSERT_EQ(gen.exit_code, 0) << gen.err;
    const auto sc = with({"scan", "--rules", d("rules"), "--database", fx.project().string(), "--out",
                          d("findings.json")},
                         false);
    ASSERT_EQ(sc.exit_code, 0) << sc.err;
    EXPECT_EQ(parse_findings(read_file(dir / "findings.json")).size(), 3u);
}
