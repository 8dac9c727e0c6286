#include "triage/backend.hpp"

#include <cstdlib>
#include <thread>

#include "triage/errors.hpp"
#include "triage/records.hpp"

namespace triage::backend {

using nlohmann::json;

std::string_view wire_role(SpeakerRole role) noexcept {
    switch (role) {
        case SpeakerRole::Patient: return "user";
        case SpeakerRole::Assistant: return "assistant";
        case SpeakerRole::System: return "system";
    }
    return "user";
}

void BackendConfig::validate() const {
    if (max_retries < 0) throw PreconditionViolation("max_retries must be >= 0");
    if (timeout.count() <= 0) throw PreconditionViolation("timeout must be positive");
    if (endpoint_url.empty()) throw PreconditionViolation("endpoint_url is required");
    if (pool_size == 0) throw PreconditionViolation("pool_size must be positive");
}

BackendConfig BackendConfig::from_json(const json& j) {
    BackendConfig cfg;
    cfg.endpoint_url = j.value("endpoint_url", std::string{});
    cfg.model_name = j.value("model_name", std::string{});
    cfg.api_key_env_var = j.value("api_key_env_var", std::string{});
    cfg.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30000));
    cfg.max_retries = j.value("max_retries", 2);
    cfg.temperature = j.value("temperature", 0.7);
    cfg.pool_size = j.value("pool_size", std::size_t{4});
    cfg.validate();
    return cfg;
}

std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

HttpChatBackend::HttpChatBackend(BackendConfig cfg, std::shared_ptr<HttpTransport> transport, Sleeper sleeper)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
    cfg_.validate();
    if (!transport_) transport_ = make_http_transport(cfg_.pool_size);
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

json HttpChatBackend::request_body(std::span<const ChatMessage> messages) const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", wire_role(m.role)}, {"content", m.content}});
    json body = {{"messages", std::move(msgs)}, {"temperature", cfg_.temperature}};
    if (!cfg_.model_name.empty()) body["model"] = cfg_.model_name;
    return body;
}

std::string HttpChatBackend::extract_completion(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error&) {
        throw BackendError(false, 200, "response is not JSON");
    }
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw BackendError(false, 200, "response lacks choices[0].message.content");
    }
}

ChatOutcome HttpChatBackend::complete(std::span<const ChatMessage> messages) const {
    if (messages.empty()) throw PreconditionViolation("chat needs at least one message");
    for (const auto& m : messages) {
        if (m.content.empty()) throw PreconditionViolation("chat message content must be non-empty");
    }

    HttpRequest req;
    req.url = cfg_.endpoint_url;
    req.timeout = cfg_.timeout;
    req.body = request_body(messages).dump();
    req.headers.emplace_back("Content-Type", "application/json");
    if (!cfg_.api_key_env_var.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env_var.c_str()); key && *key) {
            req.headers.emplace_back("Authorization", std::string("Bearer ") + key);
        }
    }

    ChatOutcome outcome;
    auto delay = kBackoffBase;
    for (int attempt = 0;; ++attempt) {
        const HttpResponse resp = transport_->post(req);
        bool timed_out = false;
        std::string failure;
        int status = 0;
        switch (resp.outcome) {
            case HttpResponse::Outcome::Ok:
                if (resp.status >= 200 && resp.status < 300) {
                    outcome.text = extract_completion(resp.body);
                    return outcome;
                }
                if (resp.status < 500) throw BackendError(false, resp.status, resp.body);
                status = resp.status;
                failure = resp.body;
                break;
            case HttpResponse::Outcome::Timeout:
                timed_out = true;
                failure = resp.error;
                break;
            case HttpResponse::Outcome::TransportError:
                failure = resp.error;
                break;
        }
        if (attempt >= cfg_.max_retries) {
            if (timed_out) throw TimeoutError(failure);
            throw BackendError(true, status, failure);
        }
        sleeper_(delay);
        outcome.delays.push_back(delay);
        ++outcome.retries;
        delay *= kBackoffFactor;
    }
}

std::string HttpChatBackend::chat(std::span<const ChatMessage> messages) { return complete(messages).text; }

bool HttpChatBackend::healthy() {
    return transport_->reachable(cfg_.endpoint_url, std::min(cfg_.timeout, std::chrono::milliseconds(2000)));
}

ScriptedBackend::ScriptedBackend(Script script, std::string default_reply)
    : script_(std::move(script)), default_reply_(std::move(default_reply)) {
    if (script_.empty()) throw PreconditionViolation("scripted backend needs at least one entry");
}

std::string ScriptedBackend::chat(std::span<const ChatMessage> messages) {
    if (messages.empty()) throw PreconditionViolation("chat needs at least one message");
    const ChatMessage* latest = &messages.back();
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == SpeakerRole::Patient) {
            latest = &*it;
            break;
        }
    }
    {
        std::lock_guard lock(mu_);
        calls_.emplace_back(messages.begin(), messages.end());
    }
    constexpr std::string_view kSystemScope = "system:";
    for (const auto& [matcher, reply] : script_) {
        if (matcher.starts_with(kSystemScope)) {
            const auto needle = std::string_view(matcher).substr(kSystemScope.size());
            for (const auto& m : messages) {
                if (m.role == SpeakerRole::System && m.content.find(needle) != std::string::npos) return reply;
            }
        } else if (latest->content.find(matcher) != std::string::npos) {
            return reply;
        }
    }
    return default_reply_;
}

bool ScriptedBackend::healthy() {
    std::lock_guard lock(mu_);
    return healthy_;
}

void ScriptedBackend::set_healthy(bool healthy) {
    std::lock_guard lock(mu_);
    healthy_ = healthy;
}

std::vector<std::vector<ChatMessage>> ScriptedBackend::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

std::shared_ptr<ScriptedBackend> scripted_mock(ScriptedBackend::Script script, std::string default_reply) {
    return std::make_shared<ScriptedBackend>(std::move(script), std::move(default_reply));
}

std::shared_ptr<ChatBackend> make_backend(const json& config) {
    const auto type = config.value("type", std::string("http"));
    if (type == "scripted") {
        ScriptedBackend::Script script;
        for (const auto& entry : config.value("script", json::array())) {
            script.emplace_back(entry.at("match").get<std::string>(), entry.at("reply").get<std::string>());
        }
        return scripted_mock(std::move(script), config.value("default_reply", std::string("Tell me more.")));
    }
    if (type == "http") return std::make_shared<HttpChatBackend>(BackendConfig::from_json(config));
    throw PreconditionViolation("unknown backend type " + type);
}

std::shared_ptr<ChatBackend> load_backend(const std::filesystem::path& config_file) {
    json j;
    try {
        j = json::parse(read_file(config_file));
    } catch (const json::parse_error& e) {
        throw PreconditionViolation("backend config " + config_file.string() + ": " + e.what());
    }
    return make_backend(j);
}

}  // namespace triage::backend
