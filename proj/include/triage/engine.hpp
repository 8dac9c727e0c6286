#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/backend.hpp"
#include "triage/core.hpp"
#include "triage/history.hpp"

namespace triage::engine {

// Greeting -> Gathering (self-loop) -> Recommended -> Summarized -> Closed.
enum class SessionPhase { Greeting, Gathering, Recommended, Summarized, Closed };

std::string_view phase_name(SessionPhase phase) noexcept;
std::optional<SessionPhase> parse_phase(std::string_view name);

struct TriageRecommendation {
    Department department;
    std::string rationale;
    std::size_t turn_index = 0;

    friend bool operator==(const TriageRecommendation&, const TriageRecommendation&) = default;
};

using Clock = std::chrono::system_clock;

struct TriageSession {
    std::string id;
    SessionPhase phase = SessionPhase::Greeting;
    std::vector<DialogueTurn> history;
    history::TokenBudget budget;
    std::optional<TriageRecommendation> recommendation;
    std::optional<EHRSummary> summary;
    Clock::time_point created_at{};
    Clock::time_point updated_at{};
    // Last Patient turn is still waiting for an Assistant reply.
    bool pending_retry = false;
};

struct EngineConfig {
    std::string greeting = "Hello, I'm here to help you find the right department. What brings you in today?";
    std::string preamble;  // empty -> default_preamble(departments)
    DepartmentSet departments;
    history::TokenBudget budget;
    history::ContextOptions context;

    std::string effective_preamble() const;
};

// Plain-language, one-question-at-a-time instructions naming the allowed
// departments and the recommendation sentence.
std::string default_preamble(const DepartmentSet& departments);

TriageSession create_session(const EngineConfig& cfg);

struct AssistantReply {
    std::string text;
    SessionPhase phase_after = SessionPhase::Gathering;
    std::optional<TriageRecommendation> recommendation;
    std::size_t turn_index = 0;
};

// Appends the Patient turn, prompts the backend with the pruned history and
// appends its reply. On BackendError the Patient turn stays (pending_retry);
// a later message is merged into it, identical text is a plain retry.
AssistantReply handle_patient_message(TriageSession& session, std::string_view text, backend::ChatBackend& backend,
                                      const EngineConfig& cfg);

// Summarizes the full stored history. Only valid in Recommended.
EHRSummary finalize_summary(TriageSession& session, backend::ChatBackend& backend, const EngineConfig& cfg);

// Summarized -> Closed.
void close_session(TriageSession& session);

Conversation session_conversation(const TriageSession& session);

// Conversation record plus session fields; one line per saved state.
nlohmann::json session_record(const TriageSession& session);
TriageSession session_from_record(const nlohmann::json& record);

class SessionStore {
public:
    virtual ~SessionStore() = default;
    virtual void save(const TriageSession& session) = 0;
    virtual std::optional<TriageSession> load(const std::string& id) = 0;
};

class MemorySessionStore final : public SessionStore {
public:
    void save(const TriageSession& session) override;
    std::optional<TriageSession> load(const std::string& id) override;

private:
    std::mutex mu_;
    std::map<std::string, TriageSession> sessions_;
};

// Append-only `<dir>/<id>.jsonl`; the last line is the current state.
class FileSessionStore final : public SessionStore {
public:
    explicit FileSessionStore(std::filesystem::path dir);
    void save(const TriageSession& session) override;
    std::optional<TriageSession> load(const std::string& id) override;

private:
    std::filesystem::path path_for(const std::string& id) const;

    std::filesystem::path dir_;
    std::mutex mu_;
};

// Sessions keyed by id, each behind its own mutex; operations on one session
// serialize, distinct sessions run concurrently.
class SessionRegistry {
public:
    SessionRegistry(EngineConfig cfg, std::shared_ptr<backend::ChatBackend> backend,
                    std::shared_ptr<SessionStore> store = std::make_shared<MemorySessionStore>());

    TriageSession create();
    AssistantReply post_message(const std::string& id, std::string_view text);
    // Finalizes on first call in Recommended; later calls return the stored
    // summary. WrongPhase before a recommendation.
    EHRSummary summary(const std::string& id);
    void close(const std::string& id);
    TriageSession snapshot(const std::string& id);

    backend::ChatBackend& backend() { return *backend_; }
    const EngineConfig& config() const noexcept { return cfg_; }

private:
    struct Slot {
        std::mutex mu;
        TriageSession session;
    };
    std::shared_ptr<Slot> slot(const std::string& id);

    EngineConfig cfg_;
    std::shared_ptr<backend::ChatBackend> backend_;
    std::shared_ptr<SessionStore> store_;
    std::shared_mutex map_mu_;
    std::map<std::string, std::shared_ptr<Slot>> slots_;
};

}  // namespace triage::engine
