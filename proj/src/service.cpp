#include "triage/service.hpp"

#include <httplib.h>

#include <thread>

#include "triage/errors.hpp"
#include "triage/records.hpp"
#include "triage/text.hpp"

namespace triage::service {

using nlohmann::json;

ApiError to_api_error(const std::exception& e) {
    if (dynamic_cast<const SessionNotFound*>(&e)) return {"session_not_found", e.what(), 404};
    if (dynamic_cast<const SessionClosed*>(&e)) return {"session_closed", e.what(), 409};
    if (dynamic_cast<const WrongPhase*>(&e)) return {"wrong_phase", e.what(), 409};
    if (dynamic_cast<const EmptyMessage*>(&e)) return {"empty_message", e.what(), 422};
    if (dynamic_cast<const BackendError*>(&e)) return {"backend_unavailable", e.what(), 502};
    if (auto* err = dynamic_cast<const Error*>(&e)) return {std::string(err->code()), e.what(), 422};
    if (dynamic_cast<const json::exception*>(&e)) return {"validation_failed", e.what(), 422};
    return {"internal_error", e.what(), 500};
}

json error_body(const ApiError& e) { return {{"error", {{"code", e.code}, {"message", e.message}}}}; }

namespace {

ApiResponse error_response(ApiError e) { return {e.http_status, error_body(e)}; }

json recommendation_json(const engine::TriageRecommendation& r) {
    return {{"department", r.department.name()}, {"rationale", r.rationale}, {"turn_index", r.turn_index}};
}

}  // namespace

json session_state(const engine::TriageSession& s) {
    json turns = json::array();
    for (const auto& t : s.history) turns.push_back({{"role", role_name(t.role)}, {"text", t.text}, {"index", t.index}});
    json j = {{"session_id", s.id}, {"phase", engine::phase_name(s.phase)}, {"turns", turns},
              {"pending_retry", s.pending_retry}};
    j["recommendation"] = s.recommendation ? recommendation_json(*s.recommendation) : json(nullptr);
    return j;
}

Router::Router(std::shared_ptr<engine::SessionRegistry> registry) : registry_(std::move(registry)) {
    if (!registry_) throw PreconditionViolation("router needs a session registry");
}

ApiResponse Router::dispatch(std::string_view method, std::string_view path, std::string_view body) {
    auto parts = text::split(path, '/');
    std::erase_if(parts, [](const std::string& p) { return p.empty(); });
    const bool get = method == "GET";
    const bool post = method == "POST";
    try {
        if (parts.size() == 2 && parts[0] == "api" && parts[1] == "health" && get) {
            const bool reachable = registry_->backend().healthy();
            return {200, {{"status", reachable ? "ok" : "degraded"}, {"backend_reachable", reachable}}};
        }
        if (parts.size() < 2 || parts[0] != "api" || parts[1] != "sessions") {
            return error_response({"not_found", "no route for " + std::string(path), 404});
        }
        if (parts.size() == 2 && post) {
            if (!registry_->backend().healthy()) {
                return error_response({"backend_unavailable", "language model backend is unreachable", 503});
            }
            auto s = registry_->create();
            return {201, {{"session_id", s.id}, {"greeting", s.history.front().text},
                          {"phase", engine::phase_name(s.phase)}}};
        }
        if (parts.size() == 3 && get) return {200, session_state(registry_->snapshot(parts[2]))};
        if (parts.size() == 4) {
            const auto& id = parts[2];
            const auto& action = parts[3];
            if (action == "messages" && post) {
                const auto payload = json::parse(body);
                if (!payload.is_object() || !payload.contains("text") || !payload["text"].is_string()) {
                    return error_response({"validation_failed", "body must be {\"text\": string}", 422});
                }
                auto reply = registry_->post_message(id, payload["text"].get<std::string>());
                json out = {{"reply", reply.text}, {"phase", engine::phase_name(reply.phase_after)},
                            {"turn_index", reply.turn_index}};
                if (reply.recommendation) out["recommendation"] = recommendation_json(*reply.recommendation);
                return {200, out};
            }
            if (action == "summary" && get) {
                auto j = to_json(registry_->summary(id));
                j["session_id"] = id;
                return {200, j};
            }
            if (action == "close" && post) {
                registry_->close(id);
                return {200, {{"session_id", id}, {"phase", engine::phase_name(engine::SessionPhase::Closed)}}};
            }
        }
        return error_response({"not_found", "no route for " + std::string(method) + " " + std::string(path), 404});
    } catch (const std::exception& e) {
        return error_response(to_api_error(e));
    }
}

struct Server::Impl {
    Router router;
    ServerOptions options;
    httplib::Server http;
    std::thread thread;
    int bound_port = 0;

    Impl(std::shared_ptr<engine::SessionRegistry> registry, ServerOptions opts)
        : router(std::move(registry)), options(std::move(opts)) {
        auto cors = [this](httplib::Response& res) {
            res.set_header("Access-Control-Allow-Origin", options.cors_origin);
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
        };
        auto handler = [this, cors](const httplib::Request& req, httplib::Response& res) {
            auto out = router.dispatch(req.method, req.path, req.body);
            res.status = out.status;
            cors(res);
            res.set_content(out.body.dump(), "application/json");
        };
        const std::string any = R"(/api(/.*)?)";
        http.Get(any, handler);
        http.Post(any, handler);
        http.Options(any, [cors](const httplib::Request&, httplib::Response& res) {
            cors(res);
            res.status = 204;
        });
    }

    void bind() {
        if (bound_port != 0) return;
        if (options.port == 0) {
            bound_port = http.bind_to_any_port(options.host);
        } else if (http.bind_to_port(options.host, options.port)) {
            bound_port = options.port;
        } else {
            bound_port = -1;
        }
        if (bound_port <= 0) {
            throw PreconditionViolation("cannot bind " + options.host + ":" + std::to_string(options.port));
        }
    }
};

Server::Server(std::shared_ptr<engine::SessionRegistry> registry, ServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(registry), std::move(options))) {}

Server::~Server() { stop(); }

int Server::start() {
    impl_->bind();
    impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return impl_->bound_port;
}

void Server::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

void Server::stop() {
    impl_->http.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int Server::port() const noexcept { return impl_->bound_port; }

}  // namespace triage::service
