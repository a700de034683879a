#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qlforge {

enum class Stage { Classify, Pair, Write, Repair };

std::string_view to_string(Stage stage);
/// Throws std::invalid_argument for an unknown tag.
Stage stage_from_string(std::string_view tag);

struct Message {
    std::string role; // "system" | "user"
    std::string content;

    friend bool operator==(const Message&, const Message&) = default;
};

struct LlmRequest {
    std::vector<Message> messages;
    std::string model;
    double temperature = 0.0;
    int max_output_tokens = 4096;
    Stage stage = Stage::Classify;

    /// Throws std::invalid_argument when the invariants do not hold.
    void validate() const;
    /// All message contents joined by newlines; what mock matchers search.
    std::string text() const;

    friend bool operator==(const LlmRequest&, const LlmRequest&) = default;
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;

    friend bool operator==(const Usage&, const Usage&) = default;
};

struct LlmResponse {
    std::string text;
    std::string finish_reason = "stop";
    std::optional<Usage> usage;
    std::chrono::milliseconds latency{0};
    /// Transcript sequence id assigned by the gateway.
    std::uint64_t seq = 0;
};

/// Upper-bound token estimate: characters / 4, rounded up.
constexpr std::size_t estimate_tokens(std::string_view text) noexcept {
    return (text.size() + 3) / 4;
}

/// A provider. send() performs one attempt; the gateway owns retries.
/// Implementations throw TransportError or RateLimited for retryable failures,
/// AuthFailure or ProviderError otherwise.
class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string name() const = 0;
    virtual LlmResponse send(const LlmRequest& request) = 0;
};

struct MockEntry {
    std::optional<Stage> stage; // nullopt matches any stage
    std::string contains;       // empty matches any text
    std::string response;
    bool once = false;
};

/// Ordered canned responses. The first entry whose stage and substring match
/// wins; consume-once entries stop matching after their first use.
///
/// File format, one JSON object per line:
///   {"stage": "classify", "contains": "...", "response": "...", "once": false}
///   {"default": "..."}
class MockScript {
public:
    MockScript() = default;
    MockScript(std::vector<MockEntry> entries, std::string default_response);

    static MockScript parse(const std::string& jsonl);
    static MockScript load(const std::filesystem::path& path);

    const std::vector<MockEntry>& entries() const { return entries_; }
    const std::string& default_response() const { return default_response_; }

private:
    std::vector<MockEntry> entries_;
    std::string default_response_;
};

class MockClient final : public LlmClient {
public:
    explicit MockClient(MockScript script);
    std::string name() const override { return "mock"; }
    LlmResponse send(const LlmRequest& request) override;

private:
    MockScript script_;
    std::vector<bool> consumed_;
    std::mutex mutex_;
};

struct LiveConfig {
    std::string endpoint = "https://api.openai.com/v1";
    std::string api_key;
    std::chrono::seconds timeout{120};

    /// Reads the key from QLFORGE_LLM_KEY; never from config files.
    static LiveConfig from_env(std::string endpoint);
};

/// OpenAI-compatible chat-completions client.
class LiveClient final : public LlmClient {
public:
    explicit LiveClient(LiveConfig config);
    std::string name() const override { return "live"; }
    LlmResponse send(const LlmRequest& request) override;

private:
    LiveConfig config_;
};

struct TranscriptEntry {
    std::uint64_t seq = 0;
    Stage stage = Stage::Classify;
    LlmRequest request;
    std::string response;
    std::string ts;
};

nlohmann::json to_json(const TranscriptEntry& entry);
TranscriptEntry transcript_entry_from_json(const nlohmann::json& doc);

/// Append-only record of every completed call. Appends are serialized;
/// sequence ids are globally unique and increasing.
class TranscriptStore {
public:
    TranscriptStore() = default;
    /// Appends to `file` (created if missing); sequence ids continue after
    /// the last entry already present.
    explicit TranscriptStore(const std::filesystem::path& file);

    std::uint64_t append(const LlmRequest& request, const LlmResponse& response);
    std::vector<TranscriptEntry> entries() const;
    std::size_t size() const;

    static std::vector<TranscriptEntry> load(const std::filesystem::path& file);

private:
    mutable std::mutex mutex_;
    std::vector<TranscriptEntry> entries_;
    std::uint64_t next_seq_ = 1;
    std::optional<std::ofstream> out_;
};

/// Builds a mock script that answers each recorded request with its recorded
/// response, in order, so a run can be replayed offline.
MockScript replay_script(const std::vector<TranscriptEntry>& entries);

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    std::function<void(std::chrono::milliseconds)> sleep;
};

struct ModelSettings {
    std::string model = "mock";
    std::optional<double> temperature; // unset: 0 for classify/pair, 0.7 for write/repair
    int max_output_tokens = 4096;
};

class Gateway {
public:
    Gateway(std::shared_ptr<LlmClient> client, std::shared_ptr<TranscriptStore> transcript,
            ModelSettings settings = {}, RetryPolicy retry = {});

    /// One logical call with bounded retries on transient failures. Every
    /// successful call is appended to the transcript exactly once.
    LlmResponse complete(const LlmRequest& request);

    /// Request with this gateway's model settings for `stage`.
    LlmRequest make_request(Stage stage, std::string system, std::string user) const;

    TranscriptStore& transcript() { return *transcript_; }
    const ModelSettings& settings() const { return settings_; }

private:
    std::shared_ptr<LlmClient> client_;
    std::shared_ptr<TranscriptStore> transcript_;
    ModelSettings settings_;
    RetryPolicy retry_;
};

} // namespace qlforge
