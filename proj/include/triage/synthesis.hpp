#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/backend.hpp"
#include "triage/core.hpp"
#include "triage/ddxplus.hpp"

namespace triage::synthesis {

inline constexpr std::string_view kDefaultMarker = "###";

// "Based on your symptoms, I recommend visiting the {department} department."
std::string recommendation_text(const Department& department);

struct SeverityBucket {
    int min_value = 1;
    int max_value = 3;
    std::string label;
    std::vector<std::string> phrases;
};

// Lay-language material for the artificial dataset. File format (JSON):
//   {"questions": {"E_183": [four variants]},
//    "severity_codes": ["E_59"],
//    "severity": [{"min": 0, "max": 3, "label": "mild", "phrases": [...]}, ...],
//    "affirmations": [...],
//    "value_phrases": {"iliac wing(R)": ["right side of my lower back", "near my right hip"]}}
// Missing "severity"/"affirmations" fall back to the built-in defaults.
struct VariantBank {
    std::map<std::string, std::vector<std::string>> questions;
    std::vector<std::string> severity_codes;
    std::vector<SeverityBucket> severity;
    std::vector<std::string> affirmations;
    std::map<std::string, std::vector<std::string>> value_phrases;

    // Throws PreconditionViolation naming the first broken invariant.
    void validate() const;
    const SeverityBucket* bucket_for(int value) const;

    static VariantBank from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

const std::vector<std::string>& canonical_affirmations();
std::vector<SeverityBucket> default_severity_buckets();

enum class RewriteGranularity { WholeConversation, TurnByTurn };

struct SynthesisConfig {
    std::string marker = std::string(kDefaultMarker);
    std::uint64_t seed = 0;
    double rewrite_temperature = 0.7;
    // Upper bound on turns accepted from a whole-conversation rewrite; 0 = none.
    std::size_t max_turns = 0;
    RewriteGranularity granularity = RewriteGranularity::WholeConversation;
};

// Catalog question verbatim, "Yes" or the literal value as answer, one
// exchange per distinct evidence code (initial evidence first), then the
// recommendation turn.
Conversation render_raw_conversation(const PatientCase& pc, const EvidenceCatalog& catalog,
                                     const ddxplus::DepartmentMapping& mapping);

// Same exchanges as the raw rendering with seeded choices of question
// variant, affirmation and severity phrase.
Conversation render_artificial_conversation(const PatientCase& pc, const EvidenceCatalog& catalog,
                                            const VariantBank& bank, const ddxplus::DepartmentMapping& mapping,
                                            std::uint64_t seed);

// True for Categorical codes listed in the bank or whose values are all
// integers within 0..10.
bool is_severity_scale(const std::string& code, const EvidenceSpec& spec, const VariantBank& bank);

struct RewriteResult {
    Conversation conversation;
    std::size_t fallback_count = 0;
};

// Each turn is replaced by the backend's rewrite; a turn whose rewrite is
// missing, changes role, contains the marker, or (for the last turn) loses
// the department falls back to the source turn.
RewriteResult rewrite_conversation_llm(const Conversation& conv, backend::ChatBackend& backend,
                                       const SynthesisConfig& cfg);

// One sample per Assistant turn: context is every earlier turn rendered
// "<RoleTag> <text> <marker>\n", target is the Assistant text.
std::vector<TrainingSample> format_training_samples(const Conversation& conv, const SynthesisConfig& cfg);

// Throws MarkerCollision if any turn contains the marker.
void ensure_marker_free(const Conversation& conv, std::string_view marker);

// Structured note from a transcript. The backend reply becomes free_text;
// "Chief complaint:", "Symptoms:" and "History:" lines in it fill the
// structured fields, otherwise they are derived from the turns.
EHRSummary summarize_turns(const std::vector<DialogueTurn>& turns, const Department& department,
                           backend::ChatBackend& backend);

EHRSummary generate_summary(const Conversation& conv, backend::ChatBackend& backend);

struct TrainingConfigOverrides {
    std::optional<int> num_train_epochs;
    std::optional<double> learning_rate;
    std::optional<int> block_size;
    std::optional<int> per_device_batch_size;
    std::optional<bool> use_lora;
    std::optional<int> lora_r;
    std::optional<std::string> precision;
    std::optional<int> dataloader_num_workers;
};

TrainingConfig emit_training_config(const TrainingConfigOverrides& overrides = {});
// Flat JSON object keyed by hyperparameter name.
std::string serialize_training_config(const TrainingConfig& cfg);
TrainingConfig parse_training_config(const std::string& serialized);

}  // namespace triage::synthesis
