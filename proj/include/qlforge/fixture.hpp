#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace qlforge {

/// Layout of a fixture corpus root.
struct FixtureLayout {
    std::filesystem::path root;

    std::filesystem::path project() const { return root / "project"; }
    std::filesystem::path manifest() const { return root / "manifest.json"; }
    std::filesystem::path llm_script() const { return root / "mock_llm.jsonl"; }
    std::filesystem::path compiler_script() const { return root / "mock_compiler.json"; }
    std::filesystem::path config() const { return root / "qlforge.ini"; }
};

struct FixtureValidation {
    std::size_t files = 0;
    std::size_t call_sites = 0;
    std::size_t seeded_flows = 0;
    std::size_t seeded_endpoints = 0;
    std::size_t decoys = 0;
    std::vector<std::string> checks; // one line per passed check
};

inline constexpr std::size_t kMinFixtureFiles = 4;
inline constexpr std::size_t kMinFixtureCallSites = 12;
inline constexpr std::size_t kMinSeededFlows = 3;

/// Re-runs the fixture extractor over the corpus and cross-checks the
/// manifest and mock scripts. Throws FixtureDrift naming the first failed
/// check.
FixtureValidation validate_fixture(const std::filesystem::path& root);

} // namespace qlforge
