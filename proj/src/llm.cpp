#include <httplib.h>

#include "qlforge/llm.hpp"

#include "qlforge/error.hpp"
#include "qlforge/util.hpp"

#include <cstdlib>
#include <ctime>
#include <regex>
#include <stdexcept>
#include <thread>

namespace qlforge {

using nlohmann::json;

std::string_view to_string(Stage stage) {
    switch (stage) {
    case Stage::Classify:
        return "classify";
    case Stage::Pair:
        return "pair";
    case Stage::Write:
        return "write";
    case Stage::Repair:
        return "repair";
    }
    return "classify";
}

Stage stage_from_string(std::string_view tag) {
    if (tag == "classify") {
        return Stage::Classify;
    }
    if (tag == "pair") {
        return Stage::Pair;
    }
    if (tag == "write") {
        return Stage::Write;
    }
    if (tag == "repair") {
        return Stage::Repair;
    }
    throw std::invalid_argument("unknown stage tag: " + std::string(tag));
}

void LlmRequest::validate() const {
    if (messages.empty()) {
        throw std::invalid_argument("llm request has no messages");
    }
    if (temperature < 0.0) {
        throw std::invalid_argument("llm request temperature is negative");
    }
}

std::string LlmRequest::text() const {
    std::string out;
    for (const auto& m : messages) {
        if (!out.empty()) {
            out.push_back('\n');
        }
        out += m.content;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mock

MockScript::MockScript(std::vector<MockEntry> entries, std::string default_response)
    : entries_(std::move(entries)), default_response_(std::move(default_response)) {}

MockScript MockScript::parse(const std::string& jsonl) {
    std::vector<MockEntry> entries;
    std::string fallback;
    int line_no = 0;
    for (const auto& line : split_lines(jsonl)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto doc = json::parse(line);
            if (doc.contains("default")) {
                fallback = doc.at("default").get<std::string>();
                continue;
            }
            MockEntry entry;
            if (doc.contains("stage") && !doc.at("stage").is_null()) {
                entry.stage = stage_from_string(doc.at("stage").get<std::string>());
            }
            entry.contains = doc.value("contains", "");
            entry.response = doc.at("response").get<std::string>();
            entry.once = doc.value("once", false);
            entries.push_back(std::move(entry));
        } catch (const std::exception& e) {
            throw ConfigError("mock script line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return MockScript(std::move(entries), std::move(fallback));
}

MockScript MockScript::load(const std::filesystem::path& path) {
    try {
        return parse(read_file(path));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("mock script: ") + e.what());
    }
}

MockClient::MockClient(MockScript script)
    : script_(std::move(script)), consumed_(script_.entries().size(), false) {}

LlmResponse MockClient::send(const LlmRequest& request) {
    const auto text = request.text();
    LlmResponse response;
    std::lock_guard lock(mutex_);
    const auto& entries = script_.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (consumed_[i] || (e.stage && *e.stage != request.stage)) {
            continue;
        }
        if (!e.contains.empty() && text.find(e.contains) == std::string::npos) {
            continue;
        }
        if (e.once) {
            consumed_[i] = true;
        }
        response.text = e.response;
        return response;
    }
    response.text = script_.default_response();
    return response;
}

// ---------------------------------------------------------------------------
// Live

LiveConfig LiveConfig::from_env(std::string endpoint) {
    LiveConfig config;
    if (!endpoint.empty()) {
        config.endpoint = std::move(endpoint);
    }
    if (const char* key = std::getenv("QLFORGE_LLM_KEY"); key != nullptr) {
        config.api_key = key;
    }
    return config;
}

LiveClient::LiveClient(LiveConfig config) : config_(std::move(config)) {}

LlmResponse LiveClient::send(const LlmRequest& request) {
    if (config_.api_key.empty()) {
        throw AuthFailure("QLFORGE_LLM_KEY is not set");
    }
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, url_re)) {
        throw ProviderError("malformed llm endpoint: " + config_.endpoint);
    }
    std::string base_path = m[2].matched ? m[2].str() : "";
    while (!base_path.empty() && base_path.back() == '/') {
        base_path.pop_back();
    }

    json messages = json::array();
    for (const auto& msg : request.messages) {
        messages.push_back({{"role", msg.role}, {"content", msg.content}});
    }
    const json body = {{"model", request.model},
                       {"messages", messages},
                       {"temperature", request.temperature},
                       {"max_tokens", request.max_output_tokens}};

    httplib::Client client(m[1].str());
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    const httplib::Headers headers = {{"Authorization", "Bearer " + config_.api_key}};

    const auto started = std::chrono::steady_clock::now();
    auto result = client.Post(base_path + "/chat/completions", headers, body.dump(), "application/json");
    if (!result) {
        throw TransportError("llm transport failure: " + httplib::to_string(result.error()));
    }
    const int status = result->status;
    if (status == 401 || status == 403) {
        throw AuthFailure("llm provider rejected credentials (HTTP " + std::to_string(status) + ")");
    }
    if (status == 429) {
        throw RateLimited("llm provider rate limited the request");
    }
    if (status >= 500) {
        throw TransportError("llm provider error HTTP " + std::to_string(status));
    }
    if (status != 200) {
        throw ProviderError("llm provider returned HTTP " + std::to_string(status) + ": " +
                            result->body.substr(0, 500));
    }

    LlmResponse response;
    response.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    try {
        const auto doc = json::parse(result->body);
        const auto& choice = doc.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        response.text = content.is_null() ? "" : content.get<std::string>();
        response.finish_reason = choice.value("finish_reason", "stop");
        if (doc.contains("usage") && doc.at("usage").is_object()) {
            const auto& usage = doc.at("usage");
            response.usage = Usage{usage.value("prompt_tokens", 0), usage.value("completion_tokens", 0)};
        }
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
    }
    return response;
}

// ---------------------------------------------------------------------------
// Transcript

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buffer[32];
    std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer;
}

json request_json(const LlmRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    return {{"model", request.model},
            {"temperature", request.temperature},
            {"max_output_tokens", request.max_output_tokens},
            {"messages", messages}};
}

} // namespace

json to_json(const TranscriptEntry& entry) {
    return {{"seq", entry.seq},
            {"stage", to_string(entry.stage)},
            {"request", request_json(entry.request)},
            {"response", entry.response},
            {"ts", entry.ts}};
}

TranscriptEntry transcript_entry_from_json(const json& doc) {
    TranscriptEntry entry;
    entry.seq = doc.at("seq").get<std::uint64_t>();
    entry.stage = stage_from_string(doc.at("stage").get<std::string>());
    const auto& req = doc.at("request");
    entry.request.model = req.at("model").get<std::string>();
    entry.request.temperature = req.at("temperature").get<double>();
    entry.request.max_output_tokens = req.at("max_output_tokens").get<int>();
    entry.request.stage = entry.stage;
    for (const auto& m : req.at("messages")) {
        entry.request.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    }
    entry.response = doc.at("response").get<std::string>();
    entry.ts = doc.value("ts", "");
    return entry;
}

TranscriptStore::TranscriptStore(const std::filesystem::path& file) {
    std::error_code ec;
    if (std::filesystem::exists(file, ec)) {
        entries_ = load(file);
        if (!entries_.empty()) {
            next_seq_ = entries_.back().seq + 1;
        }
    } else if (file.has_parent_path()) {
        std::filesystem::create_directories(file.parent_path(), ec);
    }
    out_.emplace(file, std::ios::app | std::ios::binary);
    if (!*out_) {
        throw UnwritableOutput("cannot open transcript " + file.string());
    }
}

std::uint64_t TranscriptStore::append(const LlmRequest& request, const LlmResponse& response) {
    std::lock_guard lock(mutex_);
    TranscriptEntry entry{next_seq_++, request.stage, request, response.text, utc_timestamp()};
    if (out_) {
        *out_ << to_json(entry).dump() << '\n';
        out_->flush();
    }
    entries_.push_back(std::move(entry));
    return entries_.back().seq;
}

std::vector<TranscriptEntry> TranscriptStore::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::size_t TranscriptStore::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::vector<TranscriptEntry> TranscriptStore::load(const std::filesystem::path& file) {
    std::vector<TranscriptEntry> out;
    for (const auto& line : split_lines(read_file(file))) {
        if (trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(transcript_entry_from_json(json::parse(line)));
        } catch (const std::exception&) {
            // a torn final line from an interrupted run
            break;
        }
    }
    return out;
}

MockScript replay_script(const std::vector<TranscriptEntry>& entries) {
    std::vector<MockEntry> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        out.push_back({e.stage, e.request.text(), e.response, true});
    }
    return MockScript(std::move(out), "");
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<LlmClient> client, std::shared_ptr<TranscriptStore> transcript,
                 ModelSettings settings, RetryPolicy retry)
    : client_(std::move(client)), transcript_(std::move(transcript)), settings_(std::move(settings)),
      retry_(std::move(retry)) {
    if (!transcript_) {
        transcript_ = std::make_shared<TranscriptStore>();
    }
    if (!retry_.sleep) {
        retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
    retry_.attempts = std::max(1, retry_.attempts);
}

LlmRequest Gateway::make_request(Stage stage, std::string system, std::string user) const {
    LlmRequest request;
    request.stage = stage;
    request.model = settings_.model;
    request.max_output_tokens = settings_.max_output_tokens;
    const bool creative = stage == Stage::Write || stage == Stage::Repair;
    request.temperature = settings_.temperature.value_or(creative ? 0.7 : 0.0);
    if (!system.empty()) {
        request.messages.push_back({"system", std::move(system)});
    }
    request.messages.push_back({"user", std::move(user)});
    return request;
}

LlmResponse Gateway::complete(const LlmRequest& request) {
    request.validate();
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            auto response = client_->send(request);
            response.seq = transcript_->append(request, response);
            return response;
        } catch (const TransportError&) {
            if (attempt >= retry_.attempts) {
                throw;
            }
        } catch (const RateLimited&) {
            if (attempt >= retry_.attempts) {
                throw;
            }
        }
        retry_.sleep(backoff);
        backoff *= 2;
    }
}

} // namespace qlforge
