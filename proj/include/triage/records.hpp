#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

// JSON record shapes shared by dataset files, session persistence and the
// HTTP API. One conversation per line in `.jsonl` files:
//   {"id": ..., "source": "raw", "department": "...", "turns": [{"role": "assistant", "text": ...}]}
namespace triage {

nlohmann::json to_json(const Conversation& conv);
// Consecutive same-role turns are merged (see normalize_turns).
Conversation conversation_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PatientCase& pc);
PatientCase patient_case_from_json(const nlohmann::json& j);

nlohmann::json to_json(const EHRSummary& s);
EHRSummary summary_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainingSample& s);

std::vector<Conversation> read_conversations(std::istream& in);
std::vector<Conversation> read_conversations(const std::filesystem::path& path);
void write_jsonl_line(std::ostream& out, const nlohmann::json& record);

// Writes to `<path>.partial` and renames on commit(); the partial file is
// removed if the writer is destroyed without committing.
class AtomicOutputFile {
public:
    explicit AtomicOutputFile(std::filesystem::path target);
    ~AtomicOutputFile();

    AtomicOutputFile(const AtomicOutputFile&) = delete;
    AtomicOutputFile& operator=(const AtomicOutputFile&) = delete;

    std::ostream& stream() { return out_; }
    void commit();

private:
    std::filesystem::path target_;
    std::filesystem::path partial_;
    std::ofstream out_;
    bool committed_ = false;
};

std::string read_file(const std::filesystem::path& path);

}  // namespace triage
