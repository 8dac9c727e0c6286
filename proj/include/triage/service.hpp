#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "triage/engine.hpp"

namespace triage::service {

// Error body: {"error": {"code": ..., "message": ...}}. Codes:
// session_not_found 404, session_closed 409, wrong_phase 409,
// empty_message 422, validation_failed 422, backend_unavailable 502/503,
// internal_error 500.
struct ApiError {
    std::string code;
    std::string message;
    int http_status = 500;
};

ApiError to_api_error(const std::exception& e);
nlohmann::json error_body(const ApiError& e);

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

// Transport-free routing of the REST API:
//   POST /api/sessions                     -> 201 {session_id, greeting, phase}
//   POST /api/sessions/{id}/messages       {text} -> {reply, phase, turn_index[, recommendation]}
//   GET  /api/sessions/{id}/summary        -> EHR summary
//   GET  /api/sessions/{id}                -> session state
//   POST /api/sessions/{id}/close          -> {session_id, phase}
//   GET  /api/health                       -> {status, backend_reachable}
class Router {
public:
    explicit Router(std::shared_ptr<engine::SessionRegistry> registry);

    ApiResponse dispatch(std::string_view method, std::string_view path, std::string_view body);

    engine::SessionRegistry& registry() { return *registry_; }

private:
    std::shared_ptr<engine::SessionRegistry> registry_;
};

nlohmann::json session_state(const engine::TriageSession& session);

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::string cors_origin = "*";
};

// HTTP front end; cpp-httplib stays behind the pimpl.
class Server {
public:
    Server(std::shared_ptr<engine::SessionRegistry> registry, ServerOptions options);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds and serves on a background thread; returns the bound port.
    int start();
    // Blocks until a started server is stopped.
    void wait();
    void stop();
    int port() const noexcept;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace triage::service
