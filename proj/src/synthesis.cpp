#include "triage/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "triage/errors.hpp"
#include "triage/history.hpp"
#include "triage/random.hpp"
#include "triage/text.hpp"

namespace triage::synthesis {

using nlohmann::json;

std::string recommendation_text(const Department& department) {
    return "Based on your symptoms, I recommend visiting the " + department.name() + " department.";
}

const std::vector<std::string>& canonical_affirmations() {
    static const std::vector<std::string> kAffirmations = {"I think so", "Absolutely", "Of course", "Definitely",
                                                           "For sure"};
    return kAffirmations;
}

std::vector<SeverityBucket> default_severity_buckets() {
    return {
        {0, 3, "mild",
         {"It's mild, I can barely feel it", "Just a little, it's not too bad", "It's there but pretty mild",
          "A slight discomfort, nothing major"}},
        {4, 6, "moderate",
         {"It's moderate, noticeable but bearable", "Somewhere in the middle, it bothers me",
          "It's uncomfortable but I can manage", "Fairly noticeable, it gets in the way sometimes"}},
        {7, 10, "severe",
         {"It's severe, really hard to bear", "Very intense, one of the worst pains I've had",
          "It's really bad, I can hardly think about anything else", "Quite intense, it stops me from doing things"}},
    };
}

void VariantBank::validate() const {
    for (const auto& [code, variants] : questions) {
        if (variants.size() != 4) {
            throw PreconditionViolation("variant bank entry " + code + " needs exactly 4 variants, has " +
                                        std::to_string(variants.size()));
        }
        for (const auto& v : variants) {
            if (text::is_blank(v)) throw PreconditionViolation("variant bank entry " + code + " has an empty variant");
        }
    }
    for (const auto& a : canonical_affirmations()) {
        if (std::find(affirmations.begin(), affirmations.end(), a) == affirmations.end()) {
            throw PreconditionViolation("variant bank affirmations lack '" + a + "'");
        }
    }
    std::vector<SeverityBucket> sorted = severity;
    std::sort(sorted.begin(), sorted.end(),
              [](const SeverityBucket& a, const SeverityBucket& b) { return a.min_value < b.min_value; });
    if (sorted.empty() || sorted.front().min_value > 1 || sorted.back().max_value < 10) {
        throw PreconditionViolation("severity buckets must cover 1-10");
    }
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i].min_value > sorted[i].max_value) throw PreconditionViolation("severity bucket with min > max");
        if (sorted[i].phrases.empty()) throw PreconditionViolation("severity bucket " + sorted[i].label + " has no phrases");
        if (i > 0 && sorted[i].min_value != sorted[i - 1].max_value + 1) {
            throw PreconditionViolation("severity buckets leave a gap or overlap near " +
                                        std::to_string(sorted[i].min_value));
        }
    }
    for (const auto& [value, phrases] : value_phrases) {
        if (phrases.empty()) throw PreconditionViolation("value phrase entry " + value + " is empty");
    }
}

const SeverityBucket* VariantBank::bucket_for(int value) const {
    for (const auto& b : severity) {
        if (value >= b.min_value && value <= b.max_value) return &b;
    }
    return nullptr;
}

VariantBank VariantBank::from_json(const json& j) {
    VariantBank bank;
    bank.questions = j.value("questions", decltype(bank.questions){});
    bank.severity_codes = j.value("severity_codes", std::vector<std::string>{});
    bank.value_phrases = j.value("value_phrases", decltype(bank.value_phrases){});
    if (auto it = j.find("severity"); it != j.end()) {
        for (const auto& b : *it) {
            bank.severity.push_back({b.at("min").get<int>(), b.at("max").get<int>(), b.value("label", std::string{}),
                                     b.at("phrases").get<std::vector<std::string>>()});
        }
    } else {
        bank.severity = default_severity_buckets();
    }
    bank.affirmations = j.value("affirmations", canonical_affirmations());
    bank.validate();
    return bank;
}

json VariantBank::to_json() const {
    json sev = json::array();
    for (const auto& b : severity) {
        sev.push_back({{"min", b.min_value}, {"max", b.max_value}, {"label", b.label}, {"phrases", b.phrases}});
    }
    return {{"questions", questions},
            {"severity_codes", severity_codes},
            {"severity", sev},
            {"affirmations", affirmations},
            {"value_phrases", value_phrases}};
}

namespace {

struct Exchange {
    std::string code;
    std::vector<std::string> values;
};

// Distinct codes in case order with the initial evidence first.
std::vector<Exchange> group_evidences(const PatientCase& pc) {
    std::vector<Exchange> out;
    auto add = [&](const EvidenceValue& ev) {
        auto it = std::find_if(out.begin(), out.end(), [&](const Exchange& x) { return x.code == ev.code; });
        if (it == out.end()) {
            out.push_back({ev.code, {}});
            it = std::prev(out.end());
        }
        if (ev.value) it->values.push_back(*ev.value);
    };
    for (const auto& ev : pc.evidences) {
        if (ev.code == pc.initial_evidence) add(ev);
    }
    if (out.empty()) out.push_back({pc.initial_evidence, {}});
    for (const auto& ev : pc.evidences) {
        if (ev.code != pc.initial_evidence) add(ev);
    }
    return out;
}

const EvidenceSpec& spec_for(const EvidenceCatalog& catalog, const std::string& code) {
    auto it = catalog.find(code);
    if (it == catalog.end()) throw UnknownEvidenceCode(code, 0);
    return it->second;
}

std::optional<int> as_int(const std::string& s) {
    if (s.empty() || s.size() > 3) return std::nullopt;
    if (!std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) return std::nullopt;
    return std::stoi(s);
}

template <typename T>
const T& pick(const std::vector<T>& items, rng::Engine& eng) {
    return items[static_cast<std::size_t>(rng::uniform_index(eng, items.size()))];
}

std::string join_natural(const std::vector<std::string>& parts) {
    if (parts.size() <= 1) return parts.empty() ? std::string{} : parts.front();
    std::vector<std::string> head(parts.begin(), parts.end() - 1);
    return text::join(head, ", ") + " and " + parts.back();
}

void append_turn(Conversation& conv, SpeakerRole role, std::string text) {
    conv.turns.push_back({role, std::move(text), conv.turns.size()});
}

std::string lay_value(const std::string& value, const EvidenceSpec& spec, const VariantBank& bank, rng::Engine& eng) {
    auto meaning = spec.value_meanings.find(value);
    const std::string& readable = meaning != spec.value_meanings.end() ? meaning->second : value;
    if (auto it = bank.value_phrases.find(readable); it != bank.value_phrases.end()) return pick(it->second, eng);
    if (auto it = bank.value_phrases.find(value); it != bank.value_phrases.end()) return pick(it->second, eng);
    return readable;
}

}  // namespace

bool is_severity_scale(const std::string& code, const EvidenceSpec& spec, const VariantBank& bank) {
    if (spec.data_type != EvidenceType::Categorical) return false;
    if (std::find(bank.severity_codes.begin(), bank.severity_codes.end(), code) != bank.severity_codes.end()) {
        return true;
    }
    return std::all_of(spec.possible_values.begin(), spec.possible_values.end(), [](const std::string& v) {
        auto n = as_int(v);
        return n && *n >= 0 && *n <= 10;
    });
}

Conversation render_raw_conversation(const PatientCase& pc, const EvidenceCatalog& catalog,
                                     const ddxplus::DepartmentMapping& mapping) {
    Conversation conv;
    conv.id = pc.id;
    conv.source = ConversationSource::Raw;
    conv.department = ddxplus::department_of(pc, mapping);
    for (const auto& ex : group_evidences(pc)) {
        const auto& spec = spec_for(catalog, ex.code);
        append_turn(conv, SpeakerRole::Assistant, spec.question_text);
        append_turn(conv, SpeakerRole::Patient,
                    spec.data_type == EvidenceType::Binary || ex.values.empty() ? "Yes" : text::join(ex.values, ", "));
    }
    append_turn(conv, SpeakerRole::Assistant, recommendation_text(*conv.department));
    return conv;
}

Conversation render_artificial_conversation(const PatientCase& pc, const EvidenceCatalog& catalog,
                                            const VariantBank& bank, const ddxplus::DepartmentMapping& mapping,
                                            std::uint64_t seed) {
    rng::Engine eng(seed);
    Conversation conv;
    conv.id = pc.id;
    conv.source = ConversationSource::Artificial;
    conv.department = ddxplus::department_of(pc, mapping);
    for (const auto& ex : group_evidences(pc)) {
        const auto& spec = spec_for(catalog, ex.code);
        auto q = bank.questions.find(ex.code);
        if (q == bank.questions.end() || q->second.empty()) throw MissingVariant(ex.code);
        append_turn(conv, SpeakerRole::Assistant, pick(q->second, eng));

        std::string answer;
        if (spec.data_type == EvidenceType::Binary || ex.values.empty()) {
            answer = pick(bank.affirmations, eng);
        } else if (is_severity_scale(ex.code, spec, bank)) {
            std::vector<std::string> phrases;
            for (const auto& v : ex.values) {
                const auto n = as_int(v);
                const auto* bucket = n ? bank.bucket_for(*n) : nullptr;
                phrases.push_back(bucket ? pick(bucket->phrases, eng) : lay_value(v, spec, bank, eng));
            }
            answer = join_natural(phrases);
        } else {
            std::vector<std::string> parts;
            for (const auto& v : ex.values) parts.push_back(lay_value(v, spec, bank, eng));
            answer = join_natural(parts);
        }
        append_turn(conv, SpeakerRole::Patient, std::move(answer));
    }
    append_turn(conv, SpeakerRole::Assistant, recommendation_text(*conv.department));
    return conv;
}

namespace {

std::vector<DialogueTurn> parse_tagged_transcript(const std::string& reply) {
    std::vector<DialogueTurn> turns;
    for (const auto& raw_line : text::split(reply, '\n')) {
        const auto line = text::trim(raw_line);
        if (line.empty()) continue;
        std::optional<SpeakerRole> role;
        std::string rest = line;
        if (line.front() == '[') {
            const auto close = line.find(']');
            if (close != std::string::npos) {
                role = parse_tag(line.substr(0, close + 1));
                if (role) rest = text::trim(line.substr(close + 1));
            }
        }
        if (role) {
            turns.push_back({*role, rest, turns.size()});
        } else if (!turns.empty()) {
            if (!turns.back().text.empty()) turns.back().text.push_back(' ');
            turns.back().text += line;
        }
    }
    return turns;
}

bool acceptable_rewrite(const DialogueTurn& source, const std::optional<DialogueTurn>& candidate,
                        const Conversation& conv, bool is_last, const std::string& marker) {
    if (!candidate || candidate->role != source.role || text::is_blank(candidate->text)) return false;
    if (candidate->text.find(marker) != std::string::npos) return false;
    if (is_last && conv.department && text::find_word_occurrences(candidate->text, conv.department->name()).empty()) {
        return false;
    }
    return true;
}

}  // namespace

RewriteResult rewrite_conversation_llm(const Conversation& conv, backend::ChatBackend& backend,
                                       const SynthesisConfig& cfg) {
    if (!validate_conversation(conv).empty()) throw PreconditionViolation("cannot rewrite an invalid conversation " + conv.id);
    const std::size_t n = conv.turns.size();
    std::vector<std::optional<DialogueTurn>> candidates(n);

    if (cfg.granularity == RewriteGranularity::WholeConversation) {
        std::vector<std::string> lines;
        for (const auto& t : conv.turns) lines.push_back(history::render_turn_line(t));
        const std::vector<backend::ChatMessage> messages = {
            {SpeakerRole::System,
             "Rewrite this doctor-patient triage conversation in warm, natural, everyday language a patient "
             "would understand, avoiding medical jargon. Keep exactly " +
                 std::to_string(n) +
                 " turns in the same order, one per line, each starting with its speaker tag ([Assistant] or "
                 "[Patient]). Keep the meaning of every answer and keep the department named in the final "
                 "recommendation."},
            {SpeakerRole::Patient, text::join(lines, "\n")},
        };
        auto parsed = parse_tagged_transcript(backend.chat(messages));
        if (cfg.max_turns > 0 && parsed.size() > cfg.max_turns) parsed.resize(cfg.max_turns);
        for (std::size_t i = 0; i < n && i < parsed.size(); ++i) candidates[i] = parsed[i];
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const auto& t = conv.turns[i];
            const std::vector<backend::ChatMessage> messages = {
                {SpeakerRole::System,
                 std::string("Rewrite this single ") + std::string(role_name(t.role)) +
                     " utterance from a triage conversation in natural everyday language, without medical "
                     "jargon. Reply with the rewritten utterance only."},
                {SpeakerRole::Patient, t.text},
            };
            candidates[i] = DialogueTurn{t.role, text::trim(backend.chat(messages)), i};
        }
    }

    RewriteResult result;
    result.conversation = conv;
    result.conversation.source = ConversationSource::LlmRewritten;
    for (std::size_t i = 0; i < n; ++i) {
        if (acceptable_rewrite(conv.turns[i], candidates[i], conv, i + 1 == n, cfg.marker)) {
            result.conversation.turns[i].text = candidates[i]->text;
        } else {
            ++result.fallback_count;
        }
    }
    return result;
}

void ensure_marker_free(const Conversation& conv, std::string_view marker) {
    for (const auto& t : conv.turns) {
        if (t.text.find(marker) != std::string::npos) throw MarkerCollision(std::string(marker), t.index);
    }
}

std::vector<TrainingSample> format_training_samples(const Conversation& conv, const SynthesisConfig& cfg) {
    if (cfg.marker.empty()) throw PreconditionViolation("end-of-turn marker must be non-empty");
    ensure_marker_free(conv, cfg.marker);
    std::vector<TrainingSample> samples;
    std::string context;
    for (const auto& t : conv.turns) {
        if (t.role == SpeakerRole::Assistant) samples.push_back({context, t.text});
        context += canonical_tag(t.role);
        context += ' ';
        context += t.text;
        context += ' ';
        context += cfg.marker;
        context += '\n';
    }
    return samples;
}

namespace {

std::optional<std::string> field_line(const std::string& reply, std::string_view label) {
    for (const auto& raw : text::split(reply, '\n')) {
        auto line = text::trim(raw);
        while (!line.empty() && (line.front() == '*' || line.front() == '-' || line.front() == '#')) {
            line = text::trim(line.substr(1));
        }
        if (line.size() >= label.size() && text::iequals(line.substr(0, label.size()), label)) {
            return text::trim(line.substr(label.size()));
        }
    }
    return std::nullopt;
}

std::vector<std::string> derive_symptoms(const std::vector<DialogueTurn>& turns) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        if (turns[i].role != SpeakerRole::Patient) continue;
        const auto answer = text::trim(turns[i].text);
        const bool terse = history::approx_tokens(answer) < 4;
        if (terse && i > 0 && turns[i - 1].role == SpeakerRole::Assistant) {
            out.push_back(text::trim(turns[i - 1].text) + " " + answer);
        } else {
            out.push_back(answer);
        }
    }
    return out;
}

}  // namespace

EHRSummary summarize_turns(const std::vector<DialogueTurn>& turns, const Department& department,
                           backend::ChatBackend& backend) {
    std::vector<std::string> lines;
    for (const auto& t : turns) lines.push_back(history::render_turn_line(t));
    const std::vector<backend::ChatMessage> messages = {
        {SpeakerRole::System,
         "Write a concise clinical note of this triage conversation for the receiving specialist. Begin with "
         "the lines 'Chief complaint:', 'Symptoms:' (separated by semicolons) and 'History:', then a short "
         "narrative. The patient was referred to " +
             department.name() + "."},
        {SpeakerRole::Patient, text::join(lines, "\n")},
    };
    EHRSummary summary;
    summary.free_text = text::trim(backend.chat(messages));
    summary.recommended_department = department;

    const auto derived = derive_symptoms(turns);
    if (auto cc = field_line(summary.free_text, "Chief complaint:"); cc && !cc->empty()) {
        summary.chief_complaint = *cc;
    } else if (!derived.empty()) {
        summary.chief_complaint = derived.front();
    }
    if (auto sy = field_line(summary.free_text, "Symptoms:"); sy && !sy->empty()) {
        for (const auto& s : text::split(*sy, ';')) {
            if (auto item = text::trim(s); !item.empty()) summary.symptoms.push_back(item);
        }
    } else {
        summary.symptoms = derived;
    }
    if (auto h = field_line(summary.free_text, "History:")) summary.history_notes = *h;
    return summary;
}

EHRSummary generate_summary(const Conversation& conv, backend::ChatBackend& backend) {
    if (!conv.department) throw MissingRecommendation(conv.id);
    return summarize_turns(conv.turns, *conv.department, backend);
}

namespace {

void check_positive(int v, const char* name) {
    if (v <= 0) throw InvalidHyperparameter(name);
}

void validate_training_config(const TrainingConfig& c) {
    check_positive(c.num_train_epochs, "num_train_epochs");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw InvalidHyperparameter("learning_rate");
    check_positive(c.block_size, "block_size");
    check_positive(c.per_device_batch_size, "per_device_batch_size");
    check_positive(c.lora_r, "lora_r");
    check_positive(c.dataloader_num_workers, "dataloader_num_workers");
    static const std::set<std::string> kPrecisions = {"bf16", "fp16", "fp32"};
    if (!kPrecisions.contains(c.precision)) throw InvalidHyperparameter("precision");
}

}  // namespace

TrainingConfig emit_training_config(const TrainingConfigOverrides& o) {
    TrainingConfig c;
    if (o.num_train_epochs) c.num_train_epochs = *o.num_train_epochs;
    if (o.learning_rate) c.learning_rate = *o.learning_rate;
    if (o.block_size) c.block_size = *o.block_size;
    if (o.per_device_batch_size) c.per_device_batch_size = *o.per_device_batch_size;
    if (o.use_lora) c.use_lora = *o.use_lora;
    if (o.lora_r) c.lora_r = *o.lora_r;
    if (o.precision) c.precision = *o.precision;
    if (o.dataloader_num_workers) c.dataloader_num_workers = *o.dataloader_num_workers;
    validate_training_config(c);
    return c;
}

std::string serialize_training_config(const TrainingConfig& c) {
    nlohmann::ordered_json j;
    j["num_train_epochs"] = c.num_train_epochs;
    j["learning_rate"] = c.learning_rate;
    j["block_size"] = c.block_size;
    j["per_device_batch_size"] = c.per_device_batch_size;
    j["use_lora"] = c.use_lora;
    j["lora_r"] = c.lora_r;
    j["precision"] = c.precision;
    j["dataloader_num_workers"] = c.dataloader_num_workers;
    return j.dump(2) + "\n";
}

TrainingConfig parse_training_config(const std::string& serialized) {
    const auto j = json::parse(serialized);
    TrainingConfig c;
    c.num_train_epochs = j.value("num_train_epochs", c.num_train_epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.block_size = j.value("block_size", c.block_size);
    c.per_device_batch_size = j.value("per_device_batch_size", c.per_device_batch_size);
    c.use_lora = j.value("use_lora", c.use_lora);
    c.lora_r = j.value("lora_r", c.lora_r);
    c.precision = j.value("precision", c.precision);
    c.dataloader_num_workers = j.value("dataloader_num_workers", c.dataloader_num_workers);
    validate_training_config(c);
    return c;
}

}  // namespace triage::synthesis
