#include "triage/records.hpp"

#include <sstream>

#include "triage/errors.hpp"
#include "triage/text.hpp"

namespace triage {

using nlohmann::json;

json to_json(const Conversation& conv) {
    json turns = json::array();
    for (const auto& t : conv.turns) {
        turns.push_back({{"role", role_name(t.role)}, {"text", t.text}});
    }
    json j = {{"id", conv.id}, {"source", source_name(conv.source)}};
    j["department"] = conv.department ? json(conv.department->name()) : json(nullptr);
    j["turns"] = std::move(turns);
    return j;
}

Conversation conversation_from_json(const json& j) {
    if (!j.is_object()) throw PreconditionViolation("conversation record must be an object");
    Conversation conv;
    conv.id = j.value("id", std::string{});
    if (auto it = j.find("source"); it != j.end() && it->is_string()) {
        auto src = parse_source_name(it->get<std::string>());
        if (!src) throw PreconditionViolation("unknown conversation source " + it->get<std::string>());
        conv.source = *src;
    }
    if (auto it = j.find("department"); it != j.end() && it->is_string() && !it->get<std::string>().empty()) {
        conv.department = Department(it->get<std::string>());
    }
    std::vector<DialogueTurn> turns;
    for (const auto& t : j.value("turns", json::array())) {
        auto role = parse_role_name(t.value("role", std::string{}));
        if (!role) throw PreconditionViolation("conversation " + conv.id + " has a turn with unknown role");
        turns.push_back({*role, t.value("text", std::string{}), 0});
    }
    conv.turns = normalize_turns(std::move(turns));
    return conv;
}

json to_json(const PatientCase& pc) {
    json ev = json::array();
    for (const auto& e : pc.evidences) {
        ev.push_back(e.value ? e.code + "_@_" + *e.value : e.code);
    }
    return {{"id", pc.id},
            {"age", pc.age},
            {"sex", pc.sex == Sex::M ? "M" : "F"},
            {"pathology", pc.pathology},
            {"evidences", std::move(ev)},
            {"initial_evidence", pc.initial_evidence}};
}

PatientCase patient_case_from_json(const json& j) {
    PatientCase pc;
    pc.id = j.value("id", std::string{});
    pc.age = j.value("age", 0);
    pc.sex = j.value("sex", std::string("F")) == "M" ? Sex::M : Sex::F;
    pc.pathology = j.value("pathology", std::string{});
    pc.initial_evidence = j.value("initial_evidence", std::string{});
    for (const auto& e : j.value("evidences", json::array())) {
        const auto s = e.get<std::string>();
        const auto at = s.find("_@_");
        if (at == std::string::npos) {
            pc.evidences.push_back({s, std::nullopt});
        } else {
            pc.evidences.push_back({s.substr(0, at), s.substr(at + 3)});
        }
    }
    return pc;
}

json to_json(const EHRSummary& s) {
    return {{"chief_complaint", s.chief_complaint},
            {"symptoms", s.symptoms},
            {"history_notes", s.history_notes},
            {"department", s.recommended_department.name()},
            {"free_text", s.free_text}};
}

EHRSummary summary_from_json(const json& j) {
    EHRSummary s;
    s.chief_complaint = j.value("chief_complaint", std::string{});
    s.symptoms = j.value("symptoms", std::vector<std::string>{});
    s.history_notes = j.value("history_notes", std::string{});
    s.recommended_department = Department(j.value("department", std::string{}));
    s.free_text = j.value("free_text", std::string{});
    return s;
}

json to_json(const TrainingSample& s) { return {{"context", s.context}, {"target", s.target}}; }

std::vector<Conversation> read_conversations(std::istream& in) {
    std::vector<Conversation> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::is_blank(line)) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw PreconditionViolation("conversation file line " + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(conversation_from_json(j));
    }
    return out;
}

std::vector<Conversation> read_conversations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionViolation("cannot open " + path.string());
    return read_conversations(in);
}

void write_jsonl_line(std::ostream& out, const json& record) { out << record.dump() << '\n'; }

AtomicOutputFile::AtomicOutputFile(std::filesystem::path target)
    : target_(std::move(target)), partial_(target_.string() + ".partial") {
    if (target_.has_parent_path()) std::filesystem::create_directories(target_.parent_path());
    out_.open(partial_, std::ios::binary | std::ios::trunc);
    if (!out_) throw PreconditionViolation("cannot write " + partial_.string());
}

AtomicOutputFile::~AtomicOutputFile() {
    if (committed_) return;
    out_.close();
    std::error_code ec;
    std::filesystem::remove(partial_, ec);
}

void AtomicOutputFile::commit() {
    out_.flush();
    if (!out_) throw PreconditionViolation("write failed for " + target_.string());
    out_.close();
    std::filesystem::rename(partial_, target_);
    committed_ = true;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionViolation("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace triage
