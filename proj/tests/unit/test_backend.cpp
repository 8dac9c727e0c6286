#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "fake_http_server.hpp"
#include "triage/backend.hpp"
#include "triage/errors.hpp"

using namespace triage;
using namespace triage::backend;
using namespace std::chrono_literals;

namespace {

std::string completion(const std::string& text) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump();
}

// Replays canned responses and records every request.
class FakeTransport final : public HttpTransport {
public:
    explicit FakeTransport(std::vector<HttpResponse> script) : script_(std::move(script)) {}

    HttpResponse post(const HttpRequest& request) override {
        requests.push_back(request);
        return script_[std::min(requests.size() - 1, script_.size() - 1)];
    }
    bool reachable(const std::string&, std::chrono::milliseconds) override { return up; }

    std::vector<HttpRequest> requests;
    bool up = true;

private:
    std::vector<HttpResponse> script_;
};

HttpResponse ok(const std::string& text) { return {HttpResponse::Outcome::Ok, 200, completion(text), ""}; }
HttpResponse status(int s) { return {HttpResponse::Outcome::Ok, s, "{\"error\":\"x\"}", ""}; }
HttpResponse timeout() { return {HttpResponse::Outcome::Timeout, 0, "", "read timeout"}; }
HttpResponse refused() { return {HttpResponse::Outcome::TransportError, 0, "", "connection refused"}; }

BackendConfig config(int retries = 2) {
    BackendConfig c;
    c.endpoint_url = "http://model.local/v1/chat/completions";
    c.model_name = "m";
    c.max_retries = retries;
    return c;
}

struct Harness {
    std::shared_ptr<FakeTransport> transport;
    std::vector<std::chrono::milliseconds> slept;
    std::unique_ptr<HttpChatBackend> backend;

    Harness(std::vector<HttpResponse> script, BackendConfig cfg = config())
        : transport(std::make_shared<FakeTransport>(std::move(script))) {
        backend = std::make_unique<HttpChatBackend>(cfg, transport,
                                                    [this](std::chrono::milliseconds d) { slept.push_back(d); });
    }
};

const std::vector<ChatMessage> kHello = {{SpeakerRole::System, "be brief"}, {SpeakerRole::Patient, "hello"}};

}  // namespace

TEST(Backend, WireRoles) {
    EXPECT_EQ(wire_role(SpeakerRole::Patient), "user");
    EXPECT_EQ(wire_role(SpeakerRole::Assistant), "assistant");
    EXPECT_EQ(wire_role(SpeakerRole::System), "system");
}

TEST(Backend, RequestBodyShape) {
    Harness h({ok("hi")});
    const auto body = h.backend->request_body(kHello);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][1]["content"], "hello");
    EXPECT_EQ(body["model"], "m");
    EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
}

TEST(Backend, SuccessFirstTry) {
    Harness h({ok("How long have you had it?")});
    const auto out = h.backend->complete(kHello);
    EXPECT_EQ(out.text, "How long have you had it?");
    EXPECT_EQ(out.retries, 0);
    EXPECT_TRUE(h.slept.empty());
}

TEST(Backend, TransientFailuresAreRetriedWithBackoff) {
    Harness h({status(503), status(500), ok("fine")});
    const auto out = h.backend->complete(kHello);
    EXPECT_EQ(out.text, "fine");
    EXPECT_EQ(out.retries, 2);
    EXPECT_EQ(h.slept, (std::vector<std::chrono::milliseconds>{500ms, 1000ms}));
    EXPECT_EQ(h.transport->requests.size(), 3u);
}

TEST(Backend, ClientErrorFailsImmediately) {
    Harness h({status(401), ok("never")});
    try {
        h.backend->complete(kHello);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_FALSE(e.retryable);
        EXPECT_EQ(e.status, 401);
        EXPECT_EQ(e.code(), "backend_unavailable");
    }
    EXPECT_EQ(h.transport->requests.size(), 1u);
    EXPECT_TRUE(h.slept.empty());
}

TEST(Backend, ExhaustedRetries) {
    Harness h({status(502)});
    try {
        h.backend->complete(kHello);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_TRUE(e.retryable);
        EXPECT_EQ(e.status, 502);
    }
    EXPECT_EQ(h.transport->requests.size(), 3u);

    Harness t({refused(), timeout()}, config(1));
    EXPECT_THROW(t.backend->complete(kHello), TimeoutError);
    EXPECT_EQ(t.transport->requests.size(), 2u);

    Harness none({refused()}, config(0));
    EXPECT_THROW(none.backend->complete(kHello), BackendError);
    EXPECT_EQ(none.transport->requests.size(), 1u);
}

TEST(Backend, MalformedCompletionIsNotRetried) {
    Harness h({{HttpResponse::Outcome::Ok, 200, "{\"choices\": []}", ""}});
    EXPECT_THROW(h.backend->complete(kHello), BackendError);
    EXPECT_EQ(h.transport->requests.size(), 1u);
}

TEST(Backend, Preconditions) {
    Harness h({ok("x")});
    EXPECT_THROW(h.backend->complete({}), PreconditionViolation);
    const std::vector<ChatMessage> blank = {{SpeakerRole::Patient, ""}};
    EXPECT_THROW(h.backend->complete(blank), PreconditionViolation);
    auto bad = config();
    bad.max_retries = -1;
    EXPECT_THROW(bad.validate(), PreconditionViolation);
    bad = config();
    bad.endpoint_url.clear();
    EXPECT_THROW(bad.validate(), PreconditionViolation);
}

TEST(Backend, ApiKeyComesFromEnvironment) {
    auto cfg = config();
    cfg.api_key_env_var = "TRIAGE_TEST_KEY";
    ::setenv("TRIAGE_TEST_KEY", "sk-123", 1);
    Harness h({ok("x")}, cfg);
    h.backend->complete(kHello);
    ::unsetenv("TRIAGE_TEST_KEY");
    const auto& headers = h.transport->requests[0].headers;
    EXPECT_NE(std::find(headers.begin(), headers.end(), std::pair<std::string, std::string>{"Authorization", "Bearer sk-123"}),
              headers.end());
    Harness no_key({ok("x")}, cfg);
    no_key.backend->complete(kHello);
    for (const auto& [k, _] : no_key.transport->requests[0].headers) EXPECT_NE(k, "Authorization");
}

TEST(Backend, HealthUsesTransport) {
    Harness h({ok("x")});
    EXPECT_TRUE(h.backend->healthy());
    h.transport->up = false;
    EXPECT_FALSE(h.backend->healthy());
}

TEST(Backend, ConfigFromJson) {
    const auto cfg = BackendConfig::from_json(nlohmann::json::parse(
        R"({"endpoint_url": "https://x/y", "timeout_ms": 1500, "max_retries": 4, "temperature": 0.2})"));
    EXPECT_EQ(cfg.timeout, 1500ms);
    EXPECT_EQ(cfg.max_retries, 4);
    EXPECT_DOUBLE_EQ(cfg.temperature, 0.2);
    EXPECT_THROW(make_backend(nlohmann::json{{"type", "grpc"}}), PreconditionViolation);
}

TEST(Backend, SplitUrl) {
    EXPECT_EQ(split_url("http://h:8000/v1/chat?x=1"), (std::pair<std::string, std::string>{"http://h:8000", "/v1/chat?x=1"}));
    EXPECT_EQ(split_url("https://h"), (std::pair<std::string, std::string>{"https://h", "/"}));
}

TEST(Scripted, MatchesLatestPatientMessage) {
    auto b = scripted_mock({{"cough", "Any fever?"}, {"system:note", "Chief complaint: x"}}, "Go on.");
    const std::vector<ChatMessage> m1 = {{SpeakerRole::Patient, "I cough"}, {SpeakerRole::Assistant, "ok"}};
    EXPECT_EQ(b->chat(m1), "Any fever?");
    const std::vector<ChatMessage> m2 = {{SpeakerRole::Patient, "I cough"}, {SpeakerRole::Patient, "tired"}};
    EXPECT_EQ(b->chat(m2), "Go on.");
    const std::vector<ChatMessage> m3 = {{SpeakerRole::System, "write a note"}, {SpeakerRole::Patient, "I cough"}};
    EXPECT_EQ(b->chat(m3), "Any fever?");  // script order wins
    const std::vector<ChatMessage> m4 = {{SpeakerRole::System, "write a note"}, {SpeakerRole::Patient, "x"}};
    EXPECT_EQ(b->chat(m4), "Chief complaint: x");
    EXPECT_EQ(b->calls().size(), 4u);
    EXPECT_THROW(ScriptedBackend({}), PreconditionViolation);
    EXPECT_TRUE(b->healthy());
    b->set_healthy(false);
    EXPECT_FALSE(b->healthy());
}

TEST(Scripted, LoadFromConfigFile) {
    const auto b = load_backend(std::string(TRIAGE_SOURCE_DIR) + "/data/backend.scripted.json");
    const std::vector<ChatMessage> m = {{SpeakerRole::Patient, "I have a cough"}};
    EXPECT_EQ(b->chat(m), "I'm sorry to hear that. Do you also have a fever?");
}

// ---- real sockets -----------------------------------------------------------

TEST(HttpTransport, RoundTripOverSockets) {
    FakeHttpServer server({{503, "{}"}, {200, completion("over the wire")}});
    auto cfg = config(2);
    cfg.endpoint_url = server.url();
    cfg.api_key_env_var = "TRIAGE_TEST_KEY2";
    ::setenv("TRIAGE_TEST_KEY2", "k", 1);
    std::vector<std::chrono::milliseconds> slept;
    HttpChatBackend b(cfg, make_http_transport(2), [&](auto d) { slept.push_back(d); });
    const auto out = b.complete(kHello);
    ::unsetenv("TRIAGE_TEST_KEY2");
    EXPECT_EQ(out.text, "over the wire");
    EXPECT_EQ(out.retries, 1);
    const auto reqs = server.requests();
    ASSERT_EQ(reqs.size(), 2u);
    EXPECT_EQ(reqs[0].rfind("POST /v1/chat/completions HTTP/1.1", 0), 0u);
    EXPECT_NE(reqs[0].find("Authorization: Bearer k"), std::string::npos);
    EXPECT_NE(reqs[0].find("\"content\":\"hello\""), std::string::npos);
}

TEST(HttpTransport, TimeoutIsReported) {
    FakeHttpServer server({{200, completion("late"), 1500ms}});
    auto cfg = config(0);
    cfg.endpoint_url = server.url();
    cfg.timeout = 200ms;
    HttpChatBackend b(cfg, make_http_transport(1), [](auto) {});
    EXPECT_THROW(b.complete(kHello), TimeoutError);
}

TEST(HttpTransport, UnreachableHost) {
    int port;
    {
        FakeHttpServer probe({{200, "{}"}});
        port = probe.port();
    }
    auto cfg = config(1);
    cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.timeout = 500ms;
    HttpChatBackend b(cfg, make_http_transport(1), [](auto) {});
    try {
        b.complete(kHello);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_TRUE(e.retryable);
    }
    EXPECT_FALSE(b.healthy());
    FakeHttpServer live({{404, "{}"}});
    cfg.endpoint_url = live.url();
    HttpChatBackend up(cfg, make_http_transport(1), [](auto) {});
    EXPECT_TRUE(up.healthy());
}

TEST(HttpTransport, ConcurrentCallsShareBoundedPool) {
    FakeHttpServer server({{200, completion("ok"), 20ms}});
    auto cfg = config(0);
    cfg.endpoint_url = server.url();
    HttpChatBackend b(cfg, make_http_transport(2), [](auto) {});
    std::vector<std::thread> threads;
    std::atomic<int> good{0};
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&] {
            if (b.chat(kHello) == "ok") ++good;
        });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(good.load(), 8);
    EXPECT_EQ(server.requests().size(), 8u);
}
