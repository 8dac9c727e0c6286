#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "triage/errors.hpp"
#include "triage/history.hpp"
#include "triage/records.hpp"
#include "triage/synthesis.hpp"

using namespace triage;
using namespace triage::synthesis;

namespace {

EvidenceCatalog small_catalog() {
    EvidenceCatalog c;
    c["E_183"] = {"Do you have a cough?", EvidenceType::Binary, {}, std::nullopt, {}};
    c["E_59"] = {"How intense is the pain?", EvidenceType::Categorical,
                 {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10"}, std::nullopt, {}};
    c["E_55"] = {"Where is the pain?", EvidenceType::MultiChoice, {"V_1", "V_2", "V_3"}, std::nullopt,
                 {{"V_1", "chest"}, {"V_2", "back"}, {"V_3", "flank(R)"}}};
    c["E_12"] = {"Have you travelled recently?", EvidenceType::Categorical, {"N", "AmerN", "Europe"}, std::nullopt, {}};
    return c;
}

VariantBank small_bank() {
    VariantBank b;
    b.questions["E_183"] = {"Are you coughing?", "Have you got a cough?", "Any coughing lately?", "Do you cough?"};
    b.questions["E_59"] = {"How bad is it?", "How strong is the pain?", "Rate the pain?", "How much does it hurt?"};
    b.questions["E_55"] = {"Where does it hurt?", "Show me where?", "Which spot hurts?", "Where is it?"};
    b.questions["E_12"] = {"Been abroad?", "Any trips?", "Travelled lately?", "Out of the country lately?"};
    b.severity_codes = {"E_59"};
    b.severity = default_severity_buckets();
    b.affirmations = canonical_affirmations();
    b.value_phrases["chest"] = {"in my chest"};
    b.value_phrases["back"] = {"in my back", "along my spine"};
    return b;
}

ddxplus::DepartmentMapping mapping() {
    return ddxplus::DepartmentMapping({{"Bronchitis", Department("Respiratory Medicine")}});
}

PatientCase bronchitis(std::vector<EvidenceValue> ev, std::string initial = "E_183") {
    return {"case-1", 30, Sex::F, "Bronchitis", std::move(ev), std::move(initial)};
}

Conversation conv_of(std::vector<std::pair<SpeakerRole, std::string>> turns, const char* dept = "cardiology") {
    Conversation c;
    c.id = "t";
    c.department = Department(dept);
    for (auto& [r, t] : turns) c.turns.push_back({r, t, c.turns.size()});
    return c;
}

std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

TEST(Raw, SingleBinaryEvidence) {
    const auto c = render_raw_conversation(bronchitis({{"E_183", std::nullopt}}), small_catalog(), mapping());
    ASSERT_EQ(c.turns.size(), 3u);
    EXPECT_EQ(c.turns[0].text, "Do you have a cough?");
    EXPECT_EQ(c.turns[1].text, "Yes");
    EXPECT_EQ(c.turns[2].text, "Based on your symptoms, I recommend visiting the respiratory medicine department.");
    EXPECT_EQ(c.department, Department("respiratory medicine"));
    EXPECT_EQ(c.source, ConversationSource::Raw);
    EXPECT_TRUE(validate_conversation(c).empty());
}

TEST(Raw, GroupsMultiValuesAndPutsInitialFirst) {
    const auto pc = bronchitis({{"E_59", "4"}, {"E_55", "V_1"}, {"E_183", std::nullopt}, {"E_55", "V_2"}});
    const auto c = render_raw_conversation(pc, small_catalog(), mapping());
    ASSERT_EQ(c.turns.size(), 7u);  // 3 distinct codes -> 3 exchanges + recommendation
    EXPECT_EQ(c.turns[0].text, "Do you have a cough?");
    EXPECT_EQ(c.turns[3].text, "4");
    EXPECT_EQ(c.turns[5].text, "V_1, V_2");
    EXPECT_EQ(c, render_raw_conversation(pc, small_catalog(), mapping()));
}

TEST(Raw, UnmappedPathology) {
    auto pc = bronchitis({{"E_183", std::nullopt}});
    pc.pathology = "Ebola";
    EXPECT_THROW(render_raw_conversation(pc, small_catalog(), mapping()), UnmappedPathology);
}

TEST(Artificial, BinaryAnswersAreAffirmations) {
    const auto pc = bronchitis({{"E_183", std::nullopt}});
    const auto bank = small_bank();
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto c = render_artificial_conversation(pc, small_catalog(), bank, mapping(), seed);
        const auto& qs = bank.questions.at("E_183");
        EXPECT_NE(std::find(qs.begin(), qs.end(), c.turns[0].text), qs.end());
        seen.insert(c.turns[1].text);
    }
    EXPECT_EQ(seen, std::set<std::string>(canonical_affirmations().begin(), canonical_affirmations().end()));
}

TEST(Artificial, SeverityUsesBucketPhrases) {
    const auto bank = small_bank();
    const auto severe = bank.bucket_for(8);
    ASSERT_NE(severe, nullptr);
    EXPECT_EQ(severe->label, "severe");
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto c = render_artificial_conversation(bronchitis({{"E_183", std::nullopt}, {"E_59", "8"}}),
                                                      small_catalog(), bank, mapping(), seed);
        const auto& answer = c.turns[3].text;
        EXPECT_NE(std::find(severe->phrases.begin(), severe->phrases.end(), answer), severe->phrases.end());
        EXPECT_EQ(answer.find('8'), std::string::npos);
    }
    EXPECT_EQ(bank.bucket_for(2)->label, "mild");
    EXPECT_EQ(bank.bucket_for(5)->label, "moderate");
    EXPECT_EQ(bank.bucket_for(11), nullptr);
}

TEST(Artificial, ValuesBecomeLayPhrases) {
    const auto pc = bronchitis({{"E_183", std::nullopt}, {"E_55", "V_1"}, {"E_55", "V_3"}, {"E_12", "Europe"}});
    const auto c = render_artificial_conversation(pc, small_catalog(), small_bank(), mapping(), 1);
    EXPECT_EQ(c.turns[3].text, "in my chest and flank(R)");
    EXPECT_EQ(c.turns[5].text, "Europe");
}

TEST(Artificial, SeededDeterminismAndShape) {
    const auto pc = bronchitis({{"E_183", std::nullopt}, {"E_59", "3"}, {"E_55", "V_2"}});
    const auto a = render_artificial_conversation(pc, small_catalog(), small_bank(), mapping(), 42);
    EXPECT_EQ(a, render_artificial_conversation(pc, small_catalog(), small_bank(), mapping(), 42));
    const auto raw = render_raw_conversation(pc, small_catalog(), mapping());
    EXPECT_EQ(a.turns.size(), raw.turns.size());
    for (std::size_t i = 0; i < a.turns.size(); ++i) EXPECT_EQ(a.turns[i].role, raw.turns[i].role);
    EXPECT_EQ(a.turns.back().text, raw.turns.back().text);
    EXPECT_EQ(a.source, ConversationSource::Artificial);
}

TEST(Artificial, MissingVariant) {
    auto bank = small_bank();
    bank.questions.erase("E_59");
    try {
        render_artificial_conversation(bronchitis({{"E_183", std::nullopt}, {"E_59", "3"}}), small_catalog(), bank,
                                       mapping(), 0);
        FAIL();
    } catch (const MissingVariant& e) {
        EXPECT_EQ(e.evidence_code, "E_59");
    }
}

TEST(Artificial, SeverityDetection) {
    const auto cat = small_catalog();
    VariantBank none;
    EXPECT_TRUE(is_severity_scale("E_59", cat.at("E_59"), none));  // all values 1..10
    EXPECT_FALSE(is_severity_scale("E_12", cat.at("E_12"), none));
    EXPECT_FALSE(is_severity_scale("E_183", cat.at("E_183"), none));
    EXPECT_FALSE(is_severity_scale("E_55", cat.at("E_55"), none));
}

TEST(Bank, Validation) {
    EXPECT_NO_THROW(small_bank().validate());
    auto three = small_bank();
    three.questions["E_183"].pop_back();
    EXPECT_THROW(three.validate(), PreconditionViolation);
    auto no_affirm = small_bank();
    no_affirm.affirmations = {"Yes"};
    EXPECT_THROW(no_affirm.validate(), PreconditionViolation);
    auto gap = small_bank();
    gap.severity[1].min_value = 5;
    EXPECT_THROW(gap.validate(), PreconditionViolation);
    auto round = VariantBank::from_json(small_bank().to_json());
    EXPECT_EQ(round.questions, small_bank().questions);
    EXPECT_EQ(round.severity.size(), 3u);
}

TEST(Bank, ShippedBankCoversDemoCatalog) {
    const std::string root = TRIAGE_SOURCE_DIR;
    const auto bank = VariantBank::from_json(nlohmann::json::parse(read_file(root + "/data/variant_bank.json")));
    std::ifstream in(root + "/data/demo/catalog.jsonl");
    for (const auto& [code, _] : ddxplus::parse_evidence_catalog(in)) EXPECT_TRUE(bank.questions.contains(code)) << code;
}

TEST(Rewrite, WholeConversationUppercased) {
    const auto src = conv_of({{SpeakerRole::Assistant, "What brings you in?"},
                              {SpeakerRole::Patient, "Chest pain."},
                              {SpeakerRole::Assistant, recommendation_text(Department("cardiology"))}});
    backend::CallbackBackend b([](std::span<const backend::ChatMessage> m) { return upper(m.back().content); });
    const auto r = rewrite_conversation_llm(src, b, {});
    EXPECT_EQ(r.fallback_count, 0u);
    ASSERT_EQ(r.conversation.turns.size(), 3u);
    EXPECT_EQ(r.conversation.turns[1].text, "CHEST PAIN.");
    EXPECT_EQ(r.conversation.turns[1].role, SpeakerRole::Patient);
    EXPECT_EQ(r.conversation.source, ConversationSource::LlmRewritten);
    EXPECT_EQ(r.conversation.department, src.department);
}

TEST(Rewrite, DroppedRecommendationFallsBack) {
    const auto src = conv_of({{SpeakerRole::Assistant, "What brings you in?"},
                              {SpeakerRole::Patient, "Chest pain."},
                              {SpeakerRole::Assistant, recommendation_text(Department("cardiology"))}});
    backend::CallbackBackend b([](std::span<const backend::ChatMessage>) {
        return std::string("[Assistant] Hi there, what's going on?\n[Patient] My chest\nhurts a lot.");
    });
    const auto r = rewrite_conversation_llm(src, b, {});
    EXPECT_EQ(r.fallback_count, 1u);
    EXPECT_EQ(r.conversation.turns[1].text, "My chest hurts a lot.");
    EXPECT_EQ(r.conversation.turns[2], src.turns[2]);
}

TEST(Rewrite, RejectsRoleSwapMarkerAndLostDepartment) {
    const auto src = conv_of({{SpeakerRole::Assistant, "Q?"},
                              {SpeakerRole::Patient, "A."},
                              {SpeakerRole::Assistant, recommendation_text(Department("cardiology"))}});
    backend::CallbackBackend b([](std::span<const backend::ChatMessage>) {
        return std::string("[Patient] swapped\n[Patient] has ### marker\n[Assistant] See a doctor.");
    });
    const auto r = rewrite_conversation_llm(src, b, {});
    EXPECT_EQ(r.fallback_count, 3u);
    EXPECT_EQ(r.conversation.turns, src.turns);
}

TEST(Rewrite, TurnByTurnAndMaxTurns) {
    const auto src = conv_of({{SpeakerRole::Assistant, "Q?"},
                              {SpeakerRole::Patient, "A."},
                              {SpeakerRole::Assistant, recommendation_text(Department("cardiology"))}});
    int calls = 0;
    backend::CallbackBackend echo([&](std::span<const backend::ChatMessage> m) {
        ++calls;
        return "  " + m.back().content + " (reworded)";
    });
    SynthesisConfig cfg;
    cfg.granularity = RewriteGranularity::TurnByTurn;
    const auto r = rewrite_conversation_llm(src, echo, cfg);
    EXPECT_EQ(calls, 3);
    EXPECT_EQ(r.fallback_count, 0u);
    EXPECT_EQ(r.conversation.turns[1].text, "A. (reworded)");

    backend::CallbackBackend chatty([](std::span<const backend::ChatMessage>) {
        return std::string("[Assistant] q\n[Patient] a\n[Assistant] go to cardiology\n[Patient] extra");
    });
    SynthesisConfig capped;
    capped.max_turns = 2;
    EXPECT_EQ(rewrite_conversation_llm(src, chatty, capped).fallback_count, 1u);
    EXPECT_EQ(rewrite_conversation_llm(src, chatty, {}).fallback_count, 0u);
}

TEST(Rewrite, BackendErrorsPropagate) {
    const auto src = conv_of({{SpeakerRole::Assistant, "Q?"}, {SpeakerRole::Patient, "A."}});
    backend::CallbackBackend failing([](std::span<const backend::ChatMessage>) -> std::string {
        throw BackendError(true, 500, "boom");
    });
    EXPECT_THROW(rewrite_conversation_llm(src, failing, {}), BackendError);
}

TEST(Format, HandUnrolledDecomposition) {
    const auto c = conv_of({{SpeakerRole::Assistant, "a1"},
                            {SpeakerRole::Patient, "p1"},
                            {SpeakerRole::Assistant, "a2"},
                            {SpeakerRole::Patient, "p2"}});
    const auto s = format_training_samples(c, {});
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0], (TrainingSample{"", "a1"}));
    EXPECT_EQ(s[1], (TrainingSample{"[Assistant] a1 ###\n[Patient] p1 ###\n", "a2"}));
}

TEST(Format, SingleAssistantTurn) {
    const auto s = format_training_samples(conv_of({{SpeakerRole::Assistant, "hello"}}), {});
    ASSERT_EQ(s.size(), 1u);
    EXPECT_TRUE(s[0].context.empty());
}

TEST(Format, MarkerCollisionAndCustomMarker) {
    const auto bad = conv_of({{SpeakerRole::Assistant, "a"}, {SpeakerRole::Patient, "see ### here"}});
    try {
        format_training_samples(bad, {});
        FAIL();
    } catch (const MarkerCollision& e) {
        EXPECT_EQ(e.turn_index, 1u);
    }
    SynthesisConfig cfg;
    cfg.marker = "<eot>";
    EXPECT_EQ(format_training_samples(bad, cfg).size(), 1u);
    cfg.marker = "";
    EXPECT_THROW(format_training_samples(bad, cfg), PreconditionViolation);
}

TEST(Format, PrefixChainProperty) {
    std::vector<std::pair<SpeakerRole, std::string>> turns;
    for (int i = 0; i < 21; ++i) turns.emplace_back(i % 2 ? SpeakerRole::Patient : SpeakerRole::Assistant, "t" + std::to_string(i));
    const auto c = conv_of(turns);
    const auto s = format_training_samples(c, {});
    ASSERT_EQ(s.size(), 11u);
    for (std::size_t k = 1; k < s.size(); ++k) {
        EXPECT_EQ(s[k].context.rfind(s[k - 1].context, 0), 0u);
        const auto markers = static_cast<std::size_t>(std::count(s[k].context.begin(), s[k].context.end(), '#')) / 3;
        EXPECT_EQ(markers, 2 * k);
    }
}

TEST(Summary, ParsesStructuredReply) {
    auto b = backend::scripted_mock(
        {{"system:clinical note",
          "Chief complaint: chest pain\n- Symptoms: pain on exertion; radiates to arm ;\nHistory: two weeks\nNarrative."}});
    const auto c = conv_of({{SpeakerRole::Assistant, "Hi"}, {SpeakerRole::Patient, "Chest pain when walking."}});
    const auto s = generate_summary(c, *b);
    EXPECT_EQ(s.chief_complaint, "chest pain");
    EXPECT_EQ(s.symptoms, (std::vector<std::string>{"pain on exertion", "radiates to arm"}));
    EXPECT_EQ(s.history_notes, "two weeks");
    EXPECT_EQ(s.recommended_department, Department("cardiology"));
    EXPECT_EQ(s, generate_summary(c, *b));
}

TEST(Summary, FallsBackToTurns) {
    auto b = backend::scripted_mock({{"zzz", "unused"}}, "The patient has chest pain.");
    const auto c = conv_of({{SpeakerRole::Assistant, "Do you smoke?"},
                            {SpeakerRole::Patient, "Yes"},
                            {SpeakerRole::Assistant, "Tell me about the pain."},
                            {SpeakerRole::Patient, "It is sharp and in my chest."}});
    const auto s = generate_summary(c, *b);
    EXPECT_EQ(s.free_text, "The patient has chest pain.");
    EXPECT_EQ(s.symptoms, (std::vector<std::string>{"Do you smoke? Yes", "It is sharp and in my chest."}));
    EXPECT_EQ(s.chief_complaint, "Do you smoke? Yes");
    auto no_dept = c;
    no_dept.department.reset();
    EXPECT_THROW(generate_summary(no_dept, *b), MissingRecommendation);
}

TEST(TrainingConfig, DefaultsMatchReferenceRun) {
    const auto c = emit_training_config();
    EXPECT_EQ(c.num_train_epochs, 2);
    EXPECT_DOUBLE_EQ(c.learning_rate, 2e-5);
    EXPECT_EQ(c.block_size, 128);
    EXPECT_EQ(c.per_device_batch_size, 6);
    EXPECT_TRUE(c.use_lora);
    EXPECT_EQ(c.lora_r, 8);
    EXPECT_EQ(c.precision, "bf16");
    EXPECT_EQ(c.dataloader_num_workers, 1);
    const auto text = serialize_training_config(c);
    EXPECT_NE(text.find("\"lora_r\": 8"), std::string::npos);
    EXPECT_NE(text.find("\"learning_rate\": 2e-05"), std::string::npos);
    EXPECT_EQ(parse_training_config(text), c);
}

TEST(TrainingConfig, OverridesAndValidation) {
    TrainingConfigOverrides o;
    o.num_train_epochs = 3;
    const auto c = emit_training_config(o);
    EXPECT_EQ(c.num_train_epochs, 3);
    auto expected = TrainingConfig{};
    expected.num_train_epochs = 3;
    EXPECT_EQ(c, expected);
    TrainingConfigOverrides bad;
    bad.lora_r = 0;
    try {
        emit_training_config(bad);
        FAIL();
    } catch (const InvalidHyperparameter& e) {
        EXPECT_EQ(e.name, "lora_r");
    }
    TrainingConfigOverrides nan_lr;
    nan_lr.learning_rate = std::nan("");
    EXPECT_THROW(emit_training_config(nan_lr), InvalidHyperparameter);
    EXPECT_THROW(parse_training_config(R"({"precision": "int4"})"), InvalidHyperparameter);
}
