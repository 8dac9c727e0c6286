#include "triage/core.hpp"

#include <algorithm>
#include <cctype>

#include "triage/text.hpp"

namespace triage {

std::string_view canonical_tag(SpeakerRole role) noexcept {
    switch (role) {
        case SpeakerRole::Patient: return "[Patient]";
        case SpeakerRole::Assistant: return "[Assistant]";
        case SpeakerRole::System: return "[System]";
    }
    return "[System]";
}

std::optional<SpeakerRole> parse_tag(std::string_view tag) {
    const auto t = text::trim(tag);
    for (auto role : {SpeakerRole::Patient, SpeakerRole::Assistant, SpeakerRole::System}) {
        if (text::iequals(t, canonical_tag(role))) return role;
    }
    return std::nullopt;
}

std::string_view role_name(SpeakerRole role) noexcept {
    switch (role) {
        case SpeakerRole::Patient: return "patient";
        case SpeakerRole::Assistant: return "assistant";
        case SpeakerRole::System: return "system";
    }
    return "system";
}

std::optional<SpeakerRole> parse_role_name(std::string_view name) {
    const auto n = text::to_lower(text::trim(name));
    if (n == "patient" || n == "user") return SpeakerRole::Patient;
    if (n == "assistant") return SpeakerRole::Assistant;
    if (n == "system") return SpeakerRole::System;
    return std::nullopt;
}

Department::Department(std::string_view name) : name_(text::to_lower(text::collapse_whitespace(name))) {}

DepartmentSet::DepartmentSet(std::vector<Department> departments) : items_(std::move(departments)) {
    std::erase_if(items_, [](const Department& d) { return d.empty(); });
    std::sort(items_.begin(), items_.end());
    items_.erase(std::unique(items_.begin(), items_.end()), items_.end());
}

bool DepartmentSet::contains(const Department& d) const {
    return std::binary_search(items_.begin(), items_.end(), d);
}

std::string_view source_name(ConversationSource s) noexcept {
    switch (s) {
        case ConversationSource::Raw: return "raw";
        case ConversationSource::Artificial: return "artificial";
        case ConversationSource::LlmRewritten: return "llm_rewritten";
    }
    return "raw";
}

std::optional<ConversationSource> parse_source_name(std::string_view name) {
    const auto n = text::to_lower(text::trim(name));
    if (n == "raw") return ConversationSource::Raw;
    if (n == "artificial") return ConversationSource::Artificial;
    if (n == "llm_rewritten" || n == "rewrite") return ConversationSource::LlmRewritten;
    return std::nullopt;
}

bool is_evidence_code(std::string_view code) {
    if (code.size() < 3 || code.substr(0, 2) != "E_") return false;
    return std::all_of(code.begin() + 2, code.end(),
                       [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; });
}

std::string_view rule_name(ConversationRule rule) noexcept {
    switch (rule) {
        case ConversationRule::NonEmpty: return "non-empty";
        case ConversationRule::FirstRole: return "first-role";
        case ConversationRule::Alternation: return "alternation";
        case ConversationRule::SystemPosition: return "system-position";
        case ConversationRule::EmptyText: return "empty-text";
        case ConversationRule::IndexOrder: return "index-order";
    }
    return "unknown";
}

std::vector<ConversationViolation> validate_conversation(const Conversation& conv) {
    std::vector<ConversationViolation> out;
    if (conv.turns.empty()) {
        out.push_back({std::nullopt, ConversationRule::NonEmpty, "conversation has no turns"});
        return out;
    }
    if (conv.turns.front().role == SpeakerRole::Patient) {
        out.push_back({0, ConversationRule::FirstRole, "first turn must be Assistant or System"});
    }
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        const auto& t = conv.turns[i];
        if (t.index != i) {
            out.push_back({i, ConversationRule::IndexOrder,
                           "turn at position " + std::to_string(i) + " has index " + std::to_string(t.index)});
        }
        if (text::is_blank(t.text)) {
            out.push_back({i, ConversationRule::EmptyText, "turn text is empty"});
        }
        if (i == 0) continue;
        if (t.role == conv.turns[i - 1].role) {
            out.push_back({i, ConversationRule::Alternation,
                           std::string("consecutive ") + std::string(role_name(t.role)) + " turns"});
        } else if (t.role == SpeakerRole::System) {
            out.push_back({i, ConversationRule::SystemPosition, "System turn after the first position"});
        }
    }
    return out;
}

std::optional<Department> extract_department(std::string_view reply_text, const DepartmentSet& departments) {
    struct Hit {
        std::size_t pos;
        std::size_t len;
        const Department* dept;
    };
    std::vector<Hit> hits;
    for (const auto& d : departments.items()) {
        for (auto pos : text::find_word_occurrences(reply_text, d.name())) hits.push_back({pos, d.name().size(), &d});
    }
    // A mention nested inside a longer one ("medicine" in "internal
    // medicine") does not count on its own.
    auto nested = [&](const Hit& h) {
        return std::any_of(hits.begin(), hits.end(), [&](const Hit& o) {
            return o.len > h.len && o.pos <= h.pos && h.pos + h.len <= o.pos + o.len;
        });
    };
    const Hit* last = nullptr;
    for (const auto& h : hits) {
        if (nested(h)) continue;
        if (!last || h.pos > last->pos) last = &h;
    }
    if (!last) return std::nullopt;
    return *last->dept;
}

std::vector<DialogueTurn> normalize_turns(std::vector<DialogueTurn> turns) {
    std::vector<DialogueTurn> out;
    out.reserve(turns.size());
    for (auto& t : turns) {
        auto trimmed = text::trim(t.text);
        if (!out.empty() && out.back().role == t.role) {
            if (!trimmed.empty()) {
                if (!out.back().text.empty()) out.back().text.push_back(' ');
                out.back().text += trimmed;
            }
            continue;
        }
        t.text = std::move(trimmed);
        out.push_back(std::move(t));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].index = i;
    return out;
}

}  // namespace triage
