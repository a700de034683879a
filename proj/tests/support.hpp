#pragma once

#include "qlforge/extractor.hpp"
#include "qlforge/llm.hpp"

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include <unistd.h>

namespace qlforge::test {

#ifndef QLFORGE_FIXTURE_DIR
#error "QLFORGE_FIXTURE_DIR must be defined"
#endif

inline std::filesystem::path fixture_dir() { return QLFORGE_FIXTURE_DIR; }

/// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("qlforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

private:
    std::filesystem::path path_;
};

inline std::string random_word(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    std::uniform_int_distribution<std::size_t> len(min_len, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::string out;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(alphabet[pick(rng)]);
    }
    return out;
}

/// Random free text with quotes, escapes, newlines and multibyte UTF-8.
inline std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
    static const std::vector<std::string> pieces = {"a", "Z", "0", " ", "\n", "\t", "\"", "\\", "{", "}", "(",
                                                    ")", ":", ",", "é", "ß", "→", "漢", "😀", "$@", "<init>"};
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    std::string out;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
        out += pieces[pick(rng)];
    }
    return out;
}

inline ApiRecord random_record(std::mt19937_64& rng, std::size_t snippet_max = 400) {
    ApiRecord r;
    r.package = "com." + random_word(rng, 2, 8) + "." + random_word(rng, 2, 8);
    r.type_name = random_word(rng, 1, 1);
    r.type_name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(r.type_name[0])));
    r.type_name += random_word(rng, 2, 10);
    r.method = random_word(rng, 3, 14);
    std::uniform_int_distribution<int> nparams(0, 4);
    const int n = nparams(rng);
    for (int i = 0; i < n; ++i) {
        r.params.push_back({"arg" + std::to_string(i), random_word(rng, 3, 9)});
    }
    r.return_type = random_word(rng, 3, 9);
    std::uniform_int_distribution<int> nann(0, 2);
    const int a = nann(rng);
    for (int i = 0; i < a; ++i) {
        r.annotations.push_back("@" + random_word(rng, 3, 9));
    }
    r.snippet = random_text(rng, snippet_max);
    r.first_seen = {"src/" + random_word(rng, 3, 8) + ".java", std::uniform_int_distribution<int>(1, 500)(rng)};
    return finalize_record(std::move(r));
}

inline std::shared_ptr<MockClient> mock_client(const std::string& jsonl) {
    return std::make_shared<MockClient>(MockScript::parse(jsonl));
}

inline RetryPolicy no_sleep_retry() {
    RetryPolicy policy;
    policy.sleep = [](std::chrono::milliseconds) {};
    return policy;
}

} // namespace qlforge::test
