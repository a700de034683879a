#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace qlforge {

struct ProcessResult {
    int exit_code = -1;
    std::string out;
    std::string err;
    bool timed_out = false;
    std::chrono::milliseconds elapsed{0};
};

struct ProcessOptions {
    std::optional<std::filesystem::path> cwd;
    /// Zero means no limit. On expiry the child is killed with SIGKILL.
    std::chrono::milliseconds timeout{0};
};

/// Spawns argv[0] (searched on PATH when it has no slash), captures both
/// output streams and waits for exit. Throws Error when the spawn itself fails.
ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& options = {});

/// Resolves an executable name against PATH. Absolute or relative paths are
/// checked directly.
std::optional<std::filesystem::path> find_executable(const std::string& name);

} // namespace qlforge
