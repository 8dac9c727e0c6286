#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace triage {

enum class SpeakerRole { Patient, Assistant, System };

// "[Patient]", "[Assistant]", "[System]".
std::string_view canonical_tag(SpeakerRole role) noexcept;

// Inverse of canonical_tag; case-insensitive, surrounding whitespace ignored.
std::optional<SpeakerRole> parse_tag(std::string_view tag);

// Lowercase role names used in JSON records: "patient", "assistant", "system".
std::string_view role_name(SpeakerRole role) noexcept;
std::optional<SpeakerRole> parse_role_name(std::string_view name);

// A department label. The canonical form is lowercase with collapsed
// whitespace, so equality is case-insensitive on the original spelling.
class Department {
public:
    Department() = default;
    explicit Department(std::string_view name);

    const std::string& name() const noexcept { return name_; }
    bool empty() const noexcept { return name_.empty(); }

    friend bool operator==(const Department&, const Department&) = default;
    friend auto operator<=>(const Department&, const Department&) = default;

private:
    std::string name_;
};

// The closed set of departments known at startup, kept sorted.
class DepartmentSet {
public:
    DepartmentSet() = default;
    explicit DepartmentSet(std::vector<Department> departments);

    bool contains(const Department& d) const;
    const std::vector<Department>& items() const noexcept { return items_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }

private:
    std::vector<Department> items_;
};

struct DialogueTurn {
    SpeakerRole role = SpeakerRole::Assistant;
    std::string text;
    std::size_t index = 0;

    friend bool operator==(const DialogueTurn&, const DialogueTurn&) = default;
};

enum class ConversationSource { Raw, Artificial, LlmRewritten };

std::string_view source_name(ConversationSource s) noexcept;
std::optional<ConversationSource> parse_source_name(std::string_view name);

struct Conversation {
    std::string id;
    std::vector<DialogueTurn> turns;
    std::optional<Department> department;
    ConversationSource source = ConversationSource::Raw;

    friend bool operator==(const Conversation&, const Conversation&) = default;
};

enum class Sex { M, F };

struct EvidenceValue {
    std::string code;
    std::optional<std::string> value;

    friend bool operator==(const EvidenceValue&, const EvidenceValue&) = default;
};

struct PatientCase {
    std::string id;
    int age = 0;
    Sex sex = Sex::F;
    std::string pathology;
    std::vector<EvidenceValue> evidences;
    std::string initial_evidence;

    friend bool operator==(const PatientCase&, const PatientCase&) = default;
};

// `E_` followed by one or more digits.
bool is_evidence_code(std::string_view code);

enum class EvidenceType { Binary, Categorical, MultiChoice };

struct EvidenceSpec {
    std::string question_text;
    EvidenceType data_type = EvidenceType::Binary;
    std::vector<std::string> possible_values;
    std::optional<std::string> default_value;
    // Human-readable meaning of coded values (e.g. "V_123" -> "iliac wing(R)").
    std::map<std::string, std::string> value_meanings;

    friend bool operator==(const EvidenceSpec&, const EvidenceSpec&) = default;
};

using EvidenceCatalog = std::map<std::string, EvidenceSpec>;

struct TrainingSample {
    std::string context;
    std::string target;

    friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

struct EHRSummary {
    std::string chief_complaint;
    std::vector<std::string> symptoms;
    std::string history_notes;
    Department recommended_department;
    std::string free_text;

    friend bool operator==(const EHRSummary&, const EHRSummary&) = default;
};

// Fine-tuning hyperparameters; defaults are the reference LoRA run.
struct TrainingConfig {
    int num_train_epochs = 2;
    double learning_rate = 2e-5;
    int block_size = 128;
    int per_device_batch_size = 6;
    bool use_lora = true;
    int lora_r = 8;
    std::string precision = "bf16";
    int dataloader_num_workers = 1;

    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

enum class ConversationRule { NonEmpty, FirstRole, Alternation, SystemPosition, EmptyText, IndexOrder };

std::string_view rule_name(ConversationRule rule) noexcept;

struct ConversationViolation {
    std::optional<std::size_t> index;
    ConversationRule rule;
    std::string detail;

    friend bool operator==(const ConversationViolation&, const ConversationViolation&) = default;
};

// Never throws; an empty result means every structural invariant holds.
std::vector<ConversationViolation> validate_conversation(const Conversation& conv);

// Case-insensitive whole-word scan for configured department names. One
// distinct department -> it; several -> the one mentioned last; none -> empty.
std::optional<Department> extract_department(std::string_view reply_text, const DepartmentSet& departments);

// Renumbers indices and concatenates consecutive same-role turns with a
// single space. Used when ingesting externally produced conversations.
std::vector<DialogueTurn> normalize_turns(std::vector<DialogueTurn> turns);

}  // namespace triage
