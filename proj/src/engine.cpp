#include "triage/engine.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include "triage/errors.hpp"
#include "triage/records.hpp"
#include "triage/synthesis.hpp"
#include "triage/text.hpp"

namespace triage::engine {

using nlohmann::json;

std::string_view phase_name(SessionPhase phase) noexcept {
    switch (phase) {
        case SessionPhase::Greeting: return "greeting";
        case SessionPhase::Gathering: return "gathering";
        case SessionPhase::Recommended: return "recommended";
        case SessionPhase::Summarized: return "summarized";
        case SessionPhase::Closed: return "closed";
    }
    return "closed";
}

std::optional<SessionPhase> parse_phase(std::string_view name) {
    for (auto p : {SessionPhase::Greeting, SessionPhase::Gathering, SessionPhase::Recommended,
                   SessionPhase::Summarized, SessionPhase::Closed}) {
        if (text::iequals(name, phase_name(p))) return p;
    }
    return std::nullopt;
}

std::string default_preamble(const DepartmentSet& departments) {
    std::vector<std::string> names;
    for (const auto& d : departments.items()) names.push_back(d.name());
    return "You are a friendly patient triage assistant. Talk in plain, everyday language and avoid medical "
           "jargon. Ask one short question at a time about the patient's symptoms, their duration and "
           "severity, relevant history and recent travel. Do not diagnose or suggest treatment. When you have "
           "enough information, recommend exactly one department from this list: " +
           text::join(names, ", ") + ". Use the sentence: \"" +
           synthesis::recommendation_text(Department("<department>")) + "\"";
}

std::string EngineConfig::effective_preamble() const {
    return preamble.empty() ? default_preamble(departments) : preamble;
}

namespace {

std::string new_session_id() {
    static std::mutex mu;
    static std::mt19937_64 eng{std::random_device{}()};
    static std::uint64_t counter = 0;
    std::lock_guard lock(mu);
    std::ostringstream ss;
    ss << std::hex << eng() << std::hex << (eng() ^ ++counter);
    return ss.str();
}

Clock::time_point now_after(Clock::time_point previous) {
    auto now = Clock::now();
    return now < previous ? previous : now;
}

}  // namespace

TriageSession create_session(const EngineConfig& cfg) {
    cfg.budget.validate();
    TriageSession s;
    s.id = new_session_id();
    s.phase = SessionPhase::Greeting;
    s.budget = cfg.budget;
    s.history.push_back({SpeakerRole::Assistant, cfg.greeting, 0});
    s.created_at = s.updated_at = Clock::now();
    return s;
}

AssistantReply handle_patient_message(TriageSession& session, std::string_view message, backend::ChatBackend& backend,
                                      const EngineConfig& cfg) {
    if (session.phase == SessionPhase::Closed) throw SessionClosed(session.id);
    if (session.phase != SessionPhase::Greeting && session.phase != SessionPhase::Gathering) {
        throw WrongPhase("sending a message", std::string(phase_name(session.phase)));
    }
    const auto patient_text = text::trim(message);
    if (patient_text.empty()) throw EmptyMessage();

    const auto before = session.history;
    if (session.pending_retry && !session.history.empty() && session.history.back().role == SpeakerRole::Patient) {
        auto& last = session.history.back();
        if (last.text != patient_text) last.text += " " + patient_text;
    } else {
        session.history.push_back({SpeakerRole::Patient, patient_text, session.history.size()});
    }
    session.updated_at = now_after(session.updated_at);

    const auto preamble = cfg.effective_preamble();
    std::string reply;
    try {
        history::PrunedContext ctx;
        try {
            ctx = history::build_context(session.history, session.budget, preamble, &backend, cfg.context);
            (void)history::assemble_prompt(preamble, ctx, cfg.context.counter);
        } catch (const BudgetImpossible&) {
            session.history = before;
            throw;
        }
        const auto messages = history::to_chat_messages(preamble, ctx);
        reply = text::trim(backend.chat(messages));
        if (reply.empty()) throw BackendError(false, 200, "backend returned an empty reply");
    } catch (const BackendError&) {
        session.pending_retry = true;
        throw;
    }

    session.pending_retry = false;
    const std::size_t index = session.history.size();
    session.history.push_back({SpeakerRole::Assistant, reply, index});

    AssistantReply out;
    out.text = reply;
    out.turn_index = index;
    if (auto dept = extract_department(reply, cfg.departments)) {
        session.phase = SessionPhase::Recommended;
        session.recommendation = TriageRecommendation{*dept, reply, index};
        out.recommendation = session.recommendation;
    } else {
        session.phase = SessionPhase::Gathering;
    }
    out.phase_after = session.phase;
    return out;
}

EHRSummary finalize_summary(TriageSession& session, backend::ChatBackend& backend, const EngineConfig&) {
    if (session.phase != SessionPhase::Recommended || !session.recommendation) {
        throw WrongPhase("summarizing", std::string(phase_name(session.phase)));
    }
    auto summary = synthesis::summarize_turns(session.history, session.recommendation->department, backend);
    session.summary = summary;
    session.phase = SessionPhase::Summarized;
    session.updated_at = now_after(session.updated_at);
    return summary;
}

void close_session(TriageSession& session) {
    if (session.phase == SessionPhase::Closed) throw SessionClosed(session.id);
    if (session.phase != SessionPhase::Summarized) throw WrongPhase("closing", std::string(phase_name(session.phase)));
    session.phase = SessionPhase::Closed;
    session.updated_at = now_after(session.updated_at);
}

Conversation session_conversation(const TriageSession& session) {
    Conversation conv;
    conv.id = session.id;
    conv.turns = session.history;
    conv.source = ConversationSource::Raw;
    if (session.recommendation) conv.department = session.recommendation->department;
    return conv;
}

namespace {

long long to_millis(Clock::time_point t) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

Clock::time_point from_millis(long long ms) { return Clock::time_point(std::chrono::milliseconds(ms)); }

}  // namespace

json session_record(const TriageSession& s) {
    json j = to_json(session_conversation(s));
    j["phase"] = phase_name(s.phase);
    j["pending_retry"] = s.pending_retry;
    j["budget"] = {{"max_tokens", s.budget.max_tokens}, {"reserve_for_reply", s.budget.reserve_for_reply}};
    if (s.recommendation) {
        j["recommendation"] = {{"department", s.recommendation->department.name()},
                               {"rationale", s.recommendation->rationale},
                               {"turn_index", s.recommendation->turn_index}};
    }
    if (s.summary) j["summary"] = to_json(*s.summary);
    j["created_at"] = to_millis(s.created_at);
    j["updated_at"] = to_millis(s.updated_at);
    return j;
}

TriageSession session_from_record(const json& j) {
    TriageSession s;
    s.id = j.value("id", std::string{});
    // Stored turns are already normalized; read them verbatim.
    for (const auto& t : j.value("turns", json::array())) {
        auto role = parse_role_name(t.value("role", std::string{}));
        if (!role) throw PreconditionViolation("session record has a turn with unknown role");
        s.history.push_back({*role, t.value("text", std::string{}), s.history.size()});
    }
    auto phase = parse_phase(j.value("phase", std::string("greeting")));
    if (!phase) throw PreconditionViolation("session record has unknown phase");
    s.phase = *phase;
    s.pending_retry = j.value("pending_retry", false);
    if (auto b = j.find("budget"); b != j.end()) {
        s.budget.max_tokens = b->value("max_tokens", s.budget.max_tokens);
        s.budget.reserve_for_reply = b->value("reserve_for_reply", s.budget.reserve_for_reply);
    }
    if (auto r = j.find("recommendation"); r != j.end() && r->is_object()) {
        s.recommendation = TriageRecommendation{Department(r->value("department", std::string{})),
                                                r->value("rationale", std::string{}),
                                                r->value("turn_index", std::size_t{0})};
    }
    if (auto sm = j.find("summary"); sm != j.end() && sm->is_object()) s.summary = summary_from_json(*sm);
    s.created_at = from_millis(j.value("created_at", 0LL));
    s.updated_at = from_millis(j.value("updated_at", 0LL));
    return s;
}

void MemorySessionStore::save(const TriageSession& session) {
    std::lock_guard lock(mu_);
    sessions_[session.id] = session;
}

std::optional<TriageSession> MemorySessionStore::load(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return std::nullopt;
    return it->second;
}

FileSessionStore::FileSessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::filesystem::path FileSessionStore::path_for(const std::string& id) const {
    const bool safe = !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    });
    if (!safe) throw SessionNotFound(id);
    return dir_ / (id + ".jsonl");
}

void FileSessionStore::save(const TriageSession& session) {
    const auto path = path_for(session.id);
    std::lock_guard lock(mu_);
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw PreconditionViolation("cannot append to " + path.string());
    out << session_record(session).dump() << '\n';
}

std::optional<TriageSession> FileSessionStore::load(const std::string& id) {
    std::filesystem::path path;
    try {
        path = path_for(id);
    } catch (const SessionNotFound&) {
        return std::nullopt;
    }
    std::lock_guard lock(mu_);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string line;
    std::string last;
    while (std::getline(in, line)) {
        if (!text::is_blank(line) && json::accept(line)) last = line;
    }
    if (last.empty()) return std::nullopt;
    return session_from_record(json::parse(last));
}

SessionRegistry::SessionRegistry(EngineConfig cfg, std::shared_ptr<backend::ChatBackend> backend,
                                 std::shared_ptr<SessionStore> store)
    : cfg_(std::move(cfg)), backend_(std::move(backend)), store_(std::move(store)) {
    if (!backend_) throw PreconditionViolation("session registry needs a backend");
    if (!store_) store_ = std::make_shared<MemorySessionStore>();
}

std::shared_ptr<SessionRegistry::Slot> SessionRegistry::slot(const std::string& id) {
    {
        std::shared_lock lock(map_mu_);
        if (auto it = slots_.find(id); it != slots_.end()) return it->second;
    }
    auto stored = store_->load(id);
    if (!stored) throw SessionNotFound(id);
    std::unique_lock lock(map_mu_);
    auto& entry = slots_[id];
    if (!entry) {
        entry = std::make_shared<Slot>();
        entry->session = std::move(*stored);
    }
    return entry;
}

TriageSession SessionRegistry::create() {
    auto s = create_session(cfg_);
    store_->save(s);
    auto entry = std::make_shared<Slot>();
    entry->session = s;
    std::unique_lock lock(map_mu_);
    slots_[s.id] = std::move(entry);
    return s;
}

AssistantReply SessionRegistry::post_message(const std::string& id, std::string_view text) {
    auto entry = slot(id);
    std::lock_guard lock(entry->mu);
    try {
        auto reply = handle_patient_message(entry->session, text, *backend_, cfg_);
        store_->save(entry->session);
        return reply;
    } catch (const BackendError&) {
        store_->save(entry->session);
        throw;
    }
}

EHRSummary SessionRegistry::summary(const std::string& id) {
    auto entry = slot(id);
    std::lock_guard lock(entry->mu);
    auto& s = entry->session;
    if ((s.phase == SessionPhase::Summarized || s.phase == SessionPhase::Closed) && s.summary) return *s.summary;
    auto summary = finalize_summary(s, *backend_, cfg_);
    store_->save(s);
    return summary;
}

void SessionRegistry::close(const std::string& id) {
    auto entry = slot(id);
    std::lock_guard lock(entry->mu);
    close_session(entry->session);
    store_->save(entry->session);
}

TriageSession SessionRegistry::snapshot(const std::string& id) {
    auto entry = slot(id);
    std::lock_guard lock(entry->mu);
    return entry->session;
}

}  // namespace triage::engine
