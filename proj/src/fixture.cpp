#include "qlforge/fixture.hpp"

#include "qlforge/error.hpp"
#include "qlforge/extractor.hpp"
#include "qlforge/llm.hpp"
#include "qlforge/report.hpp"
#include "qlforge/rulegen.hpp"
#include "qlforge/util.hpp"

#include <algorithm>
#include <set>

namespace qlforge {

namespace fs = std::filesystem;

namespace {

std::string qualified(const ApiRecord& r) {
    return (r.package.empty() ? "" : r.package + ".") + r.type_name + "." + r.method;
}

void require(bool ok, const std::string& what) {
    if (!ok) {
        throw FixtureDrift(what);
    }
}

} // namespace

FixtureValidation validate_fixture(const fs::path& root) {
    const FixtureLayout layout{root};
    FixtureValidation v;
    std::error_code ec;

    require(fs::is_directory(root, ec) && !fs::is_empty(root, ec), "fixture root is missing or empty: " + root.string());
    for (const auto& p : {layout.manifest(), layout.llm_script(), layout.compiler_script()}) {
        require(fs::is_regular_file(p, ec), "fixture file missing: " + p.filename().string());
    }
    require(fs::is_directory(layout.project(), ec), "fixture project tree missing");

    FixtureBackend backend;
    std::vector<ApiRecord> sites;
    try {
        sites = backend.enumerate(layout.project());
    } catch (const Error& e) {
        throw FixtureDrift(std::string("extractor failed on fixture: ") + e.what());
    }
    std::set<std::string> files;
    for (const auto& s : sites) {
        files.insert(s.first_seen.file);
    }
    v.files = files.size();
    v.call_sites = sites.size();
    require(v.files >= kMinFixtureFiles,
            "fixture has call sites in " + std::to_string(v.files) + " files, expected >= " +
                std::to_string(kMinFixtureFiles));
    require(v.call_sites >= kMinFixtureCallSites,
            "fixture has " + std::to_string(v.call_sites) + " call sites, expected >= " +
                std::to_string(kMinFixtureCallSites));
    v.checks.push_back("corpus: " + std::to_string(v.call_sites) + " call sites in " + std::to_string(v.files) +
                       " files");

    KnownVulnManifest manifest;
    try {
        manifest = KnownVulnManifest::load(layout.manifest());
    } catch (const Error& e) {
        throw FixtureDrift(std::string("manifest unreadable: ") + e.what());
    }
    v.seeded_flows = manifest.entries.size();
    require(v.seeded_flows >= kMinSeededFlows, "manifest lists fewer than " + std::to_string(kMinSeededFlows) +
                                                   " seeded flows");
    std::set<std::string> classes;
    std::set<std::string> endpoints;
    for (const auto& e : manifest.entries) {
        const auto file = layout.project() / e.file;
        require(fs::is_regular_file(file, ec), "manifest entry " + e.id + " points at missing file " + e.file);
        const auto lines = split_lines(read_file(file));
        require(e.end_line <= static_cast<int>(lines.size()),
                "manifest entry " + e.id + " line range exceeds " + e.file);
        require(!e.source_method.empty() && !e.sink_method.empty(),
                "manifest entry " + e.id + " lacks source_method/sink_method");
        auto seen_in_file = [&](const std::string& method, bool in_range) {
            return std::any_of(sites.begin(), sites.end(), [&](const ApiRecord& r) {
                return qualified(r) == method && r.first_seen.file == e.file &&
                       (!in_range || (r.first_seen.line >= e.start_line && r.first_seen.line <= e.end_line));
            });
        };
        require(seen_in_file(e.source_method, false),
                "manifest entry " + e.id + ": source " + e.source_method + " not extracted from " + e.file);
        require(seen_in_file(e.sink_method, true),
                "manifest entry " + e.id + ": sink " + e.sink_method + " not extracted within lines " +
                    std::to_string(e.start_line) + "-" + std::to_string(e.end_line));
        classes.insert(e.vulnerability_class);
        endpoints.insert(e.source_method);
        endpoints.insert(e.sink_method);
    }
    for (const char* cls : {"sql-injection", "path-traversal", "command-injection"}) {
        require(classes.contains(cls), std::string("manifest has no ") + cls + " flow");
    }
    v.checks.push_back("manifest: " + std::to_string(v.seeded_flows) + " seeded flows match extractor output");

    // decoys: retained APIs that are not seeded endpoints
    const auto retained = dedupe(filter_risky(sites, FilterConfig::defaults()));
    std::set<std::string> retained_names;
    for (const auto& r : retained) {
        retained_names.insert(qualified(r));
    }
    for (const auto& ep : endpoints) {
        require(retained_names.contains(ep), "seeded endpoint " + ep + " removed by the default filter");
    }
    v.seeded_endpoints = endpoints.size();
    v.decoys = static_cast<std::size_t>(std::count_if(
        retained.begin(), retained.end(), [&](const ApiRecord& r) { return !endpoints.contains(qualified(r)); }));
    require(v.decoys > v.seeded_endpoints, "decoys (" + std::to_string(v.decoys) +
                                               ") do not outnumber seeded endpoints (" +
                                               std::to_string(v.seeded_endpoints) + ")");
    v.checks.push_back("decoys: " + std::to_string(v.decoys) + " vs " + std::to_string(v.seeded_endpoints) +
                       " seeded endpoints");

    try {
        MockScript::load(layout.llm_script());
        MockCompiler::load(layout.compiler_script());
    } catch (const Error& e) {
        throw FixtureDrift(std::string("mock script unreadable: ") + e.what());
    }
    v.checks.push_back("mock scripts parse");
    return v;
}

} // namespace qlforge
