#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "triage/core.hpp"

// Reading DDXPlus-style release files.
//
// Catalog: JSON Lines, one evidence per line, e.g.
//   {"name": "E_59", "question_en": "...", "data_type": "C", "possible-values": [1, ..., 10]}
// A single JSON object keyed by evidence code (the shape of the public
// release_evidences.json) is accepted as well.
//
// Cases: CSV with a header naming AGE, SEX, PATHOLOGY, EVIDENCES and
// INITIAL_EVIDENCE (other columns ignored). EVIDENCES is a list literal such as
// "['E_183', 'E_59_@_4']", where `CODE_@_VALUE` carries a categorical value.
//
// Department mapping: `pathology<TAB>department` per line, `#` comments.
namespace triage::ddxplus {

EvidenceCatalog parse_evidence_catalog(std::istream& in);
void write_evidence_catalog(std::ostream& out, const EvidenceCatalog& catalog);

enum class ParseMode { Strict, Lenient };

struct RowViolation {
    std::size_t row = 0;  // 1-based data row (header excluded)
    std::string kind;     // unknown_evidence_code | value_out_of_domain | malformed_row
    std::string code;
    std::string value;
    std::string message;
};

struct CaseParseReport {
    std::size_t rows_read = 0;
    std::size_t rows_accepted = 0;
    std::vector<RowViolation> violations;
};

// Streams rows into `sink` one at a time. Strict mode throws the first row
// error (UnknownEvidenceCode, ValueOutOfDomain or MalformedRow); lenient mode
// skips offending rows and records them in the report.
CaseParseReport for_each_patient_case(std::istream& in, const EvidenceCatalog& catalog, ParseMode mode,
                                      const std::function<void(PatientCase&&)>& sink);

struct CaseParseResult {
    std::vector<PatientCase> cases;
    std::vector<RowViolation> violations;
};

CaseParseResult parse_patient_cases(std::istream& in, const EvidenceCatalog& catalog,
                                    ParseMode mode = ParseMode::Strict);

// Parses one "['E_1', 'E_2_@_V_3']" literal into (code, value) pairs.
std::vector<EvidenceValue> parse_evidence_list(std::string_view literal);

class DepartmentMapping {
public:
    DepartmentMapping() = default;
    explicit DepartmentMapping(std::map<std::string, Department> entries) : entries_(std::move(entries)) {}

    static DepartmentMapping parse(std::istream& in);

    const Department* find(const std::string& pathology) const;
    const std::map<std::string, Department>& entries() const noexcept { return entries_; }
    DepartmentSet departments() const;

    // Throws UnmappedPathology naming every pathology without an entry.
    void ensure_total(const std::set<std::string>& pathologies) const;

private:
    std::map<std::string, Department> entries_;
};

// Throws UnmappedPathology if the mapping lacks the case's pathology.
Department department_of(const PatientCase& pc, const DepartmentMapping& mapping);

enum class StratifyBy { Pathology };

struct SamplingSpec {
    std::size_t n = 1;
    std::uint64_t seed = 0;
    StratifyBy stratify_by = StratifyBy::Pathology;
};

// Decides which cases a stratified sample keeps, given only per-stratum
// counts. Each stratum gets its largest-remainder share of n; members are
// drawn uniformly without replacement, strata visited in name order.
class StratifiedSelector {
public:
    StratifiedSelector(const std::map<std::string, std::size_t>& stratum_sizes, const SamplingSpec& spec);

    // `ordinal` is the case's 0-based position among cases of its stratum.
    bool keep(const std::string& stratum, std::size_t ordinal) const;
    const std::map<std::string, std::size_t>& allocation() const noexcept { return allocation_; }

private:
    std::map<std::string, std::size_t> allocation_;
    std::map<std::string, std::vector<bool>> chosen_;
};

// Deterministic in (input order, seed); output keeps input order.
std::vector<PatientCase> sample_cases(const std::vector<PatientCase>& cases, const SamplingSpec& spec);

}  // namespace triage::ddxplus
