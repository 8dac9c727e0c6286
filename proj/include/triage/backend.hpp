#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

namespace triage::backend {

struct ChatMessage {
    SpeakerRole role = SpeakerRole::Patient;
    std::string content;
};

// Chat-completion role names: Patient -> "user", Assistant -> "assistant",
// System -> "system".
std::string_view wire_role(SpeakerRole role) noexcept;

// Implementations must tolerate concurrent calls from several sessions.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string chat(std::span<const ChatMessage> messages) = 0;
    virtual bool healthy() { return true; }
};

struct BackendConfig {
    std::string endpoint_url;
    std::string model_name;
    std::string api_key_env_var;
    std::chrono::milliseconds timeout{30000};
    int max_retries = 2;
    double temperature = 0.7;
    std::size_t pool_size = 4;

    void validate() const;
    static BackendConfig from_json(const nlohmann::json& j);
};

struct HttpRequest {
    std::string url;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
    std::chrono::milliseconds timeout{30000};
};

struct HttpResponse {
    enum class Outcome { Ok, TransportError, Timeout };
    Outcome outcome = Outcome::Ok;
    int status = 0;
    std::string body;
    std::string error;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
    // Any HTTP answer from the host counts as reachable.
    virtual bool reachable(const std::string& url, std::chrono::milliseconds timeout) = 0;
};

// cpp-httplib transport with a bounded pool of keep-alive clients per host.
std::shared_ptr<HttpTransport> make_http_transport(std::size_t pool_size);

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct ChatOutcome {
    std::string text;
    int retries = 0;
    std::vector<std::chrono::milliseconds> delays;
};

// Client for chat-completion JSON endpoints. Transport errors, timeouts and
// 5xx responses are retried with exponential backoff (500 ms, doubling);
// 4xx responses fail at once.
class HttpChatBackend final : public ChatBackend {
public:
    static constexpr std::chrono::milliseconds kBackoffBase{500};
    static constexpr int kBackoffFactor = 2;

    explicit HttpChatBackend(BackendConfig cfg, std::shared_ptr<HttpTransport> transport = nullptr,
                             Sleeper sleeper = nullptr);

    ChatOutcome complete(std::span<const ChatMessage> messages) const;
    std::string chat(std::span<const ChatMessage> messages) override;
    bool healthy() override;

    nlohmann::json request_body(std::span<const ChatMessage> messages) const;
    static std::string extract_completion(const std::string& body);

    const BackendConfig& config() const noexcept { return cfg_; }

private:
    BackendConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    Sleeper sleeper_;
};

// Deterministic backend: the latest Patient message is matched against the
// script in order (substring match) and the paired reply is returned. A
// matcher written "system:<text>" is looked up in the System messages instead.
class ScriptedBackend final : public ChatBackend {
public:
    using Script = std::vector<std::pair<std::string, std::string>>;

    ScriptedBackend(Script script, std::string default_reply = "Tell me more.");

    std::string chat(std::span<const ChatMessage> messages) override;
    bool healthy() override;

    void set_healthy(bool healthy);
    std::vector<std::vector<ChatMessage>> calls() const;

private:
    Script script_;
    std::string default_reply_;
    mutable std::mutex mu_;
    bool healthy_ = true;
    std::vector<std::vector<ChatMessage>> calls_;
};

std::shared_ptr<ScriptedBackend> scripted_mock(ScriptedBackend::Script script,
                                               std::string default_reply = "Tell me more.");

// Wraps a callable; used for judges and fault injection in tests.
class CallbackBackend final : public ChatBackend {
public:
    using Fn = std::function<std::string(std::span<const ChatMessage>)>;
    explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string chat(std::span<const ChatMessage> messages) override { return fn_(messages); }

private:
    Fn fn_;
};

// Backend config file:
//   {"type": "http", "endpoint_url": ..., "model_name": ..., "api_key_env_var": ...,
//    "timeout_ms": 30000, "max_retries": 2, "temperature": 0.7}
// or {"type": "scripted", "script": [{"match": ..., "reply": ...}], "default_reply": ...}
std::shared_ptr<ChatBackend> make_backend(const nlohmann::json& config);
std::shared_ptr<ChatBackend> load_backend(const std::filesystem::path& config_file);

// Splits an URL into ("scheme://host[:port]", "/path?query").
std::pair<std::string, std::string> split_url(const std::string& url);

}  // namespace triage::backend
