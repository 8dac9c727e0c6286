#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "triage/ddxplus.hpp"
#include "triage/errors.hpp"
#include "triage/random.hpp"

using namespace triage;
using namespace triage::ddxplus;

namespace {

const char* kCatalog =
    R"({"name": "E_183", "question_en": "Do you have a cough?", "data_type": "B", "possible-values": [], "extra": 1})"
    "\n"
    R"({"name": "E_59", "question_en": "How intense is the pain?", "data_type": "C", "possible-values": ["1","2","3","4","5","6","7","8","9","10"], "default_value": 0})"
    "\n"
    R"({"code": "E_55", "question": "Where is the pain?", "data_type": "M", "possible-values": ["V_1", "V_2"], "value_meaning": {"V_1": {"en": "chest", "fr": "poitrine"}, "V_2": {"en": "back"}}})"
    "\n";

EvidenceCatalog catalog() {
    std::istringstream in(kCatalog);
    return parse_evidence_catalog(in);
}

std::string cases_csv(const std::vector<std::string>& rows) {
    std::string out = "AGE,SEX,PATHOLOGY,EVIDENCES,INITIAL_EVIDENCE\n";
    for (const auto& r : rows) out += r + "\n";
    return out;
}

std::vector<PatientCase> synthetic_cases(const std::vector<std::pair<std::string, std::size_t>>& strata,
                                         std::uint64_t shuffle_seed) {
    std::vector<PatientCase> cases;
    for (const auto& [p, n] : strata) {
        for (std::size_t i = 0; i < n; ++i) {
            PatientCase pc;
            pc.pathology = p;
            pc.id = p + "-" + std::to_string(i);
            cases.push_back(pc);
        }
    }
    rng::Engine e(shuffle_seed);
    rng::shuffle(cases, e);
    return cases;
}

std::map<std::string, std::size_t> strata_counts(const std::vector<PatientCase>& cases) {
    std::map<std::string, std::size_t> m;
    for (const auto& c : cases) ++m[c.pathology];
    return m;
}

}  // namespace

TEST(Catalog, ParsesTypesValuesAndMeanings) {
    const auto cat = catalog();
    ASSERT_EQ(cat.size(), 3u);
    EXPECT_EQ(cat.at("E_183").data_type, EvidenceType::Binary);
    EXPECT_TRUE(cat.at("E_183").possible_values.empty());
    EXPECT_EQ(cat.at("E_59").data_type, EvidenceType::Categorical);
    EXPECT_EQ(cat.at("E_59").possible_values.size(), 10u);
    EXPECT_EQ(cat.at("E_59").default_value, "0");
    EXPECT_EQ(cat.at("E_55").data_type, EvidenceType::MultiChoice);
    EXPECT_EQ(cat.at("E_55").value_meanings.at("V_1"), "chest");
}

TEST(Catalog, EmptyFileIsEmptyCatalog) {
    std::istringstream in("  \n");
    EXPECT_TRUE(parse_evidence_catalog(in).empty());
}

TEST(Catalog, WholeObjectFormAccepted) {
    std::istringstream in(R"({
        "E_183": {"name": "E_183", "question_en": "Cough?", "data_type": "B"},
        "E_7": {"question_en": "Fever?", "data_type": "B"}
    })");
    const auto cat = parse_evidence_catalog(in);
    EXPECT_EQ(cat.size(), 2u);
    EXPECT_TRUE(cat.contains("E_7"));
}

TEST(Catalog, MalformedRecordsCarryLocator) {
    std::istringstream missing_q("{\"name\": \"E_1\", \"question_en\": \"ok\", \"data_type\": \"B\"}\n"
                                 "{\"name\": \"E_2\", \"data_type\": \"B\"}\n");
    try {
        parse_evidence_catalog(missing_q);
        FAIL();
    } catch (const MalformedRecord& e) {
        EXPECT_EQ(e.evidence_code, "E_2");
        EXPECT_EQ(e.line, 2u);
    }
    std::istringstream bad_type(R"({"name": "E_3", "question_en": "q", "data_type": "X"})");
    EXPECT_THROW(parse_evidence_catalog(bad_type), MalformedRecord);
    std::istringstream bad_code(R"({"name": "X_3", "question_en": "q", "data_type": "B"})");
    EXPECT_THROW(parse_evidence_catalog(bad_code), MalformedRecord);
}

TEST(Catalog, RoundTrip) {
    const auto cat = catalog();
    std::ostringstream out;
    write_evidence_catalog(out, cat);
    std::istringstream in(out.str());
    EXPECT_EQ(parse_evidence_catalog(in), cat);
}

TEST(Cases, DecodesValueConvention) {
    std::istringstream in(cases_csv({R"(30,F,Bronchitis,"['E_183', 'E_59_@_4']",E_183)"}));
    const auto res = parse_patient_cases(in, catalog());
    ASSERT_EQ(res.cases.size(), 1u);
    const auto& pc = res.cases[0];
    EXPECT_EQ(pc.age, 30);
    EXPECT_EQ(pc.sex, Sex::F);
    EXPECT_EQ(pc.pathology, "Bronchitis");
    EXPECT_EQ(pc.evidences, (std::vector<EvidenceValue>{{"E_183", std::nullopt}, {"E_59", "4"}}));
    EXPECT_EQ(pc.initial_evidence, "E_183");
    EXPECT_EQ(pc.id, "case-1");
}

TEST(Cases, EvidenceListLiteral) {
    EXPECT_EQ(parse_evidence_list("[]"), std::vector<EvidenceValue>{});
    EXPECT_EQ(parse_evidence_list(R"(["E_1","E_55_@_V_2"])"),
              (std::vector<EvidenceValue>{{"E_1", std::nullopt}, {"E_55", "V_2"}}));
}

TEST(Cases, ZeroRowsGiveEmptyList) {
    std::istringstream header_only(cases_csv({}));
    EXPECT_TRUE(parse_patient_cases(header_only, catalog()).cases.empty());
    std::istringstream nothing("");
    EXPECT_TRUE(parse_patient_cases(nothing, catalog()).cases.empty());
}

TEST(Cases, StrictModeThrowsWithRow) {
    std::istringstream in(cases_csv({R"(30,F,Flu,"['E_183']",E_183)", R"(31,M,Flu,"['E_9999']",E_183)"}));
    try {
        parse_patient_cases(in, catalog());
        FAIL();
    } catch (const UnknownEvidenceCode& e) {
        EXPECT_EQ(e.evidence_code, "E_9999");
        EXPECT_EQ(e.row, 2u);
    }
}

TEST(Cases, LenientModeCollectsViolations) {
    std::istringstream in(cases_csv({
        R"(30,F,Flu,"['E_183']",E_183)",
        R"(31,M,Flu,"['E_9999']",E_183)",
        R"(32,M,Flu,"['E_183', 'E_59_@_11']",E_183)",
        R"(33,M,Flu,"['E_183_@_1']",E_183)",
        R"(x,M,Flu,"['E_183']",E_183)",
        R"(34,Q,Flu,"['E_183']",E_183)",
        R"(35,F,Flu,"['E_59_@_2']",E_183)",
        R"(36,F,Flu,"['E_55_@_V_1', 'E_55_@_V_2', 'E_183']",E_55)",
    }));
    const auto res = parse_patient_cases(in, catalog(), ParseMode::Lenient);
    ASSERT_EQ(res.cases.size(), 2u);
    EXPECT_EQ(res.cases[1].evidences.size(), 3u);
    std::vector<std::pair<std::size_t, std::string>> got;
    for (const auto& v : res.violations) got.emplace_back(v.row, v.kind);
    EXPECT_EQ(got, (std::vector<std::pair<std::size_t, std::string>>{{2, "unknown_evidence_code"},
                                                                     {3, "value_out_of_domain"},
                                                                     {4, "value_out_of_domain"},
                                                                     {5, "malformed_row"},
                                                                     {6, "malformed_row"},
                                                                     {7, "malformed_row"}}));
    EXPECT_EQ(res.violations[1].value, "11");
}

TEST(Cases, QuotedFieldsAndCrlf) {
    std::istringstream in("AGE,SEX,PATHOLOGY,EVIDENCES,INITIAL_EVIDENCE,NOTE\r\n"
                          "40,M,\"Acute COPD exacerbation / infection\",\"['E_183']\",E_183,\"a \"\"quoted\"\"\nnote\"\r\n");
    const auto res = parse_patient_cases(in, catalog());
    ASSERT_EQ(res.cases.size(), 1u);
    EXPECT_EQ(res.cases[0].pathology, "Acute COPD exacerbation / infection");
}

TEST(Cases, MissingColumnIsFatal) {
    std::istringstream in("AGE,SEX,PATHOLOGY\n1,M,x\n");
    EXPECT_THROW(parse_patient_cases(in, catalog(), ParseMode::Lenient), MalformedRow);
}

TEST(Mapping, ParseLookupAndTotality) {
    std::istringstream in("# comment\nBronchitis\trespiratory medicine\r\nGERD\tGastroenterology\n\n");
    const auto m = DepartmentMapping::parse(in);
    PatientCase a, b;
    a.pathology = b.pathology = "Bronchitis";
    EXPECT_EQ(department_of(a, m), Department("respiratory medicine"));
    EXPECT_EQ(department_of(a, m), department_of(b, m));
    a.pathology = "Ebola";
    EXPECT_THROW(department_of(a, m), UnmappedPathology);
    EXPECT_NO_THROW(m.ensure_total({"GERD", "Bronchitis"}));
    try {
        m.ensure_total({"Ebola", "GERD", "Anemia"});
        FAIL();
    } catch (const UnmappedPathology& e) {
        EXPECT_NE(std::string(e.what()).find("Anemia, Ebola"), std::string::npos);
    }
    EXPECT_EQ(m.departments().size(), 2u);
    std::istringstream bad("Bronchitis respiratory\n");
    EXPECT_THROW(DepartmentMapping::parse(bad), PreconditionViolation);
}

TEST(Mapping, ShippedMappingCoversAllConditions) {
    std::ifstream in(std::string(TRIAGE_SOURCE_DIR) + "/data/departments.tsv");
    const auto m = DepartmentMapping::parse(in);
    EXPECT_EQ(m.entries().size(), 49u);
}

TEST(Sampling, HandExample) {
    const auto cases = synthetic_cases({{"P1", 600}, {"P2", 400}}, 1);
    const auto out = sample_cases(cases, {100, 7});
    const auto counts = strata_counts(out);
    EXPECT_EQ(counts.at("P1"), 60u);
    EXPECT_EQ(counts.at("P2"), 40u);
}

TEST(Sampling, FullSampleIsEveryCaseOnce) {
    const auto cases = synthetic_cases({{"A", 5}, {"B", 3}}, 2);
    EXPECT_EQ(sample_cases(cases, {8, 1}), cases);
}

TEST(Sampling, DeterministicAndOrderPreserving) {
    const auto cases = synthetic_cases({{"A", 50}, {"B", 30}, {"C", 20}}, 3);
    const auto a = sample_cases(cases, {17, 99});
    EXPECT_EQ(a, sample_cases(cases, {17, 99}));
    EXPECT_NE(a, sample_cases(cases, {17, 100}));
    std::size_t pos = 0;
    for (const auto& pc : a) {
        while (pos < cases.size() && cases[pos].id != pc.id) ++pos;
        ASSERT_LT(pos, cases.size()) << "output is not a subsequence of the input";
    }
}

TEST(Sampling, Errors) {
    const auto cases = synthetic_cases({{"A", 5}}, 4);
    EXPECT_THROW(sample_cases(cases, {6, 0}), InsufficientCases);
    EXPECT_THROW(sample_cases(cases, {0, 0}), PreconditionViolation);
}

TEST(Sampling, ProportionProperty) {
    // |count_out(p)/n - count_in(p)/N| <= 1/n and size == n, on random strata.
    rng::Engine e(2024);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::pair<std::string, std::size_t>> strata;
        const auto k = 1 + rng::uniform_index(e, 6);
        std::size_t total = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const auto s = 1 + rng::uniform_index(e, 80);
            strata.emplace_back("P" + std::to_string(i), s);
            total += s;
        }
        const auto cases = synthetic_cases(strata, trial);
        const auto n = 1 + rng::uniform_index(e, total);
        const auto out = sample_cases(cases, {n, static_cast<std::uint64_t>(trial)});
        ASSERT_EQ(out.size(), n);
        const auto counts = strata_counts(out);
        for (const auto& [p, s] : strata) {
            const double got = counts.contains(p) ? static_cast<double>(counts.at(p)) : 0.0;
            ASSERT_LE(std::abs(got / n - static_cast<double>(s) / total), 1.0 / n + 1e-12);
        }
    }
}

TEST(Sampling, SelectorMatchesSampleCases) {
    const auto cases = synthetic_cases({{"A", 40}, {"B", 25}}, 5);
    const SamplingSpec spec{20, 11};
    StratifiedSelector sel(strata_counts(cases), spec);
    std::map<std::string, std::size_t> seen;
    std::vector<PatientCase> streamed;
    for (const auto& pc : cases) {
        if (sel.keep(pc.pathology, seen[pc.pathology]++)) streamed.push_back(pc);
    }
    EXPECT_EQ(streamed, sample_cases(cases, spec));
    EXPECT_FALSE(sel.keep("unknown", 0));
}
