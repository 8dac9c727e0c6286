#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "triage/errors.hpp"
#include "triage/records.hpp"

using namespace triage;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("triage_records_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Records, ConversationRoundTrip) {
    Conversation c;
    c.id = "x1";
    c.source = ConversationSource::LlmRewritten;
    c.department = Department("Neurology");
    c.turns = {{SpeakerRole::Assistant, "Hi", 0}, {SpeakerRole::Patient, "Headache \"bad\"\nsince noon", 1}};
    const auto j = to_json(c);
    EXPECT_EQ(j["source"], "llm_rewritten");
    EXPECT_EQ(j["department"], "neurology");
    EXPECT_EQ(conversation_from_json(j), c);
}

TEST(Records, MissingDepartmentIsNull) {
    Conversation c;
    c.id = "x";
    c.turns = {{SpeakerRole::Assistant, "Hi", 0}};
    EXPECT_TRUE(to_json(c)["department"].is_null());
    EXPECT_FALSE(conversation_from_json(to_json(c)).department);
}

TEST(Records, IngestNormalizesTurns) {
    const auto j = nlohmann::json::parse(R"({"id":"n","turns":[
        {"role":"assistant","text":"Hi"},{"role":"user","text":"I"},{"role":"patient","text":"cough"}]})");
    const auto c = conversation_from_json(j);
    ASSERT_EQ(c.turns.size(), 2u);
    EXPECT_EQ(c.turns[1].text, "I cough");
    EXPECT_EQ(c.source, ConversationSource::Raw);
}

TEST(Records, BadRecordsAreRejected) {
    EXPECT_THROW(conversation_from_json(nlohmann::json::array()), PreconditionViolation);
    EXPECT_THROW(conversation_from_json(nlohmann::json::parse(R"({"turns":[{"role":"doctor","text":"x"}]})")),
                 PreconditionViolation);
    EXPECT_THROW(conversation_from_json(nlohmann::json::parse(R"({"source":"web"})")), PreconditionViolation);
    std::istringstream in("{\"id\":\"a\"}\n\nnot json\n");
    try {
        read_conversations(in);
        FAIL();
    } catch (const PreconditionViolation& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
}

TEST(Records, PatientCaseRoundTrip) {
    PatientCase pc{"case-7", 42, Sex::M, "GERD", {{"E_77", std::nullopt}, {"E_56", "7"}, {"E_55", "V_101"}}, "E_77"};
    const auto j = to_json(pc);
    EXPECT_EQ(j["evidences"][1], "E_56_@_7");
    EXPECT_EQ(patient_case_from_json(j), pc);
}

TEST(Records, SummaryRoundTrip) {
    EHRSummary s{"cough", {"cough", "fever"}, "3 days", Department("Pulmonology"), "note"};
    const auto j = to_json(s);
    EXPECT_EQ(j["department"], "pulmonology");
    EXPECT_EQ(summary_from_json(j), s);
}

TEST(Records, AtomicFileCommitsOrDisappears) {
    const auto dir = temp_dir("atomic");
    {
        AtomicOutputFile f(dir / "kept.txt");
        f.stream() << "data";
        f.commit();
    }
    {
        AtomicOutputFile f(dir / "sub" / "dropped.txt");
        f.stream() << "half";
        EXPECT_TRUE(fs::exists(dir / "sub" / "dropped.txt.partial"));
    }
    EXPECT_EQ(read_file(dir / "kept.txt"), "data");
    EXPECT_FALSE(fs::exists(dir / "sub" / "dropped.txt"));
    EXPECT_FALSE(fs::exists(dir / "sub" / "dropped.txt.partial"));
    EXPECT_THROW(read_file(dir / "nope"), PreconditionViolation);
}
