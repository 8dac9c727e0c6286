#include "triage/ddxplus.hpp"

#include <istream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "triage/errors.hpp"
#include "triage/random.hpp"
#include "triage/text.hpp"

namespace triage::ddxplus {

using nlohmann::json;

namespace {

std::string value_to_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return v.dump();
}

std::pair<std::string, EvidenceSpec> parse_catalog_record(const json& rec, const std::string& fallback_code,
                                                          std::size_t line) {
    if (!rec.is_object()) throw MalformedRecord(fallback_code, "record is not an object", line);
    std::string code = fallback_code;
    for (const char* key : {"code", "name"}) {
        if (auto it = rec.find(key); it != rec.end() && it->is_string()) {
            code = it->get<std::string>();
            break;
        }
    }
    if (!is_evidence_code(code)) throw MalformedRecord(code, "code does not match E_<digits>", line);

    EvidenceSpec spec;
    auto q = rec.find("question_en");
    if (q == rec.end()) q = rec.find("question");
    if (q == rec.end() || !q->is_string() || text::is_blank(q->get<std::string>())) {
        throw MalformedRecord(code, "missing question text", line);
    }
    spec.question_text = text::trim(q->get<std::string>());

    const auto type = rec.value("data_type", std::string{});
    if (type == "B") {
        spec.data_type = EvidenceType::Binary;
    } else if (type == "C") {
        spec.data_type = EvidenceType::Categorical;
    } else if (type == "M") {
        spec.data_type = EvidenceType::MultiChoice;
    } else {
        throw MalformedRecord(code, "invalid data_type '" + type + "'", line);
    }

    auto pv = rec.find("possible-values");
    if (pv == rec.end()) pv = rec.find("possible_values");
    if (pv != rec.end() && pv->is_array()) {
        for (const auto& v : *pv) spec.possible_values.push_back(value_to_string(v));
    }
    if (spec.data_type == EvidenceType::Binary) {
        spec.possible_values.clear();
    } else if (spec.possible_values.size() < 2) {
        throw MalformedRecord(code, "categorical/multi-choice evidence needs at least 2 possible values", line);
    }
    if (auto dv = rec.find("default_value"); dv != rec.end() && !dv->is_null()) {
        spec.default_value = value_to_string(*dv);
    }
    if (auto vm = rec.find("value_meaning"); vm != rec.end() && vm->is_object()) {
        for (const auto& [k, v] : vm->items()) {
            if (v.is_string()) {
                spec.value_meanings[k] = v.get<std::string>();
            } else if (v.is_object() && v.contains("en") && v["en"].is_string()) {
                spec.value_meanings[k] = v["en"].get<std::string>();
            }
        }
    }
    return {code, std::move(spec)};
}

// RFC 4180 record reader; quoted fields may span lines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& physical_lines) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++physical_lines;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            ++physical_lines;
            fields.push_back(std::move(field));
            return true;
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    return true;
}

struct Columns {
    std::size_t age, sex, pathology, evidences, initial;
};

Columns locate_columns(const std::vector<std::string>& header) {
    auto find = [&](const char* name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (text::iequals(text::trim(header[i]), name)) return i;
        }
        throw MalformedRow(std::string("header lacks column ") + name, 0);
    };
    return {find("AGE"), find("SEX"), find("PATHOLOGY"), find("EVIDENCES"), find("INITIAL_EVIDENCE")};
}

bool value_in_domain(const EvidenceSpec& spec, const std::string& value) {
    for (const auto& v : spec.possible_values) {
        if (v == value) return true;
    }
    return false;
}

PatientCase decode_row(const std::vector<std::string>& fields, const Columns& cols, const EvidenceCatalog& catalog,
                       std::size_t row) {
    const std::size_t needed = std::max({cols.age, cols.sex, cols.pathology, cols.evidences, cols.initial});
    if (fields.size() <= needed) throw MalformedRow("expected at least " + std::to_string(needed + 1) + " columns", row);

    PatientCase pc;
    pc.id = "case-" + std::to_string(row);
    const auto age = text::trim(fields[cols.age]);
    try {
        std::size_t used = 0;
        pc.age = std::stoi(age, &used);
        if (used != age.size() || pc.age < 0) throw std::invalid_argument(age);
    } catch (const std::exception&) {
        throw MalformedRow("invalid AGE '" + age + "'", row);
    }
    const auto sex = text::trim(fields[cols.sex]);
    if (sex == "M") {
        pc.sex = Sex::M;
    } else if (sex == "F") {
        pc.sex = Sex::F;
    } else {
        throw MalformedRow("invalid SEX '" + sex + "'", row);
    }
    pc.pathology = text::trim(fields[cols.pathology]);
    if (pc.pathology.empty()) throw MalformedRow("empty PATHOLOGY", row);
    pc.initial_evidence = text::trim(fields[cols.initial]);

    pc.evidences = parse_evidence_list(fields[cols.evidences]);
    for (const auto& ev : pc.evidences) {
        auto it = catalog.find(ev.code);
        if (it == catalog.end()) throw UnknownEvidenceCode(ev.code, row);
        const auto& spec = it->second;
        if (spec.data_type == EvidenceType::Binary) {
            if (ev.value) throw ValueOutOfDomain(ev.code, *ev.value, row);
        } else if (!ev.value || !value_in_domain(spec, *ev.value)) {
            throw ValueOutOfDomain(ev.code, ev.value.value_or(""), row);
        }
    }
    if (!catalog.contains(pc.initial_evidence)) throw UnknownEvidenceCode(pc.initial_evidence, row);
    const bool listed = std::any_of(pc.evidences.begin(), pc.evidences.end(),
                                    [&](const EvidenceValue& e) { return e.code == pc.initial_evidence; });
    if (!listed) throw MalformedRow("initial evidence " + pc.initial_evidence + " not among evidences", row);
    return pc;
}

}  // namespace

EvidenceCatalog parse_evidence_catalog(std::istream& in) {
    EvidenceCatalog catalog;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text::is_blank(content)) return catalog;

    // Whole-file object keyed by code?
    const auto first = content.find_first_not_of(" \t\r\n");
    const auto first_nl = content.find('\n', first);
    const std::string first_line = content.substr(first, first_nl == std::string::npos ? std::string::npos : first_nl - first);
    if (!json::accept(first_line)) {
        json whole;
        try {
            whole = json::parse(content);
        } catch (const json::parse_error& e) {
            throw MalformedRecord("", std::string("unparseable catalog: ") + e.what(), 1);
        }
        if (!whole.is_object()) throw MalformedRecord("", "catalog must be JSON lines or an object keyed by code", 1);
        std::size_t ordinal = 0;
        for (const auto& [key, rec] : whole.items()) {
            auto [code, spec] = parse_catalog_record(rec, key, ++ordinal);
            catalog[code] = std::move(spec);
        }
        return catalog;
    }

    std::size_t lineno = 0;
    for (const auto& line : text::split(content, '\n')) {
        ++lineno;
        if (text::is_blank(line)) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw MalformedRecord("", std::string("invalid JSON: ") + e.what(), lineno);
        }
        auto [code, spec] = parse_catalog_record(rec, "", lineno);
        catalog[code] = std::move(spec);
    }
    return catalog;
}

void write_evidence_catalog(std::ostream& out, const EvidenceCatalog& catalog) {
    for (const auto& [code, spec] : catalog) {
        json rec = {{"name", code}, {"question_en", spec.question_text}};
        switch (spec.data_type) {
            case EvidenceType::Binary: rec["data_type"] = "B"; break;
            case EvidenceType::Categorical: rec["data_type"] = "C"; break;
            case EvidenceType::MultiChoice: rec["data_type"] = "M"; break;
        }
        rec["possible-values"] = spec.possible_values;
        rec["default_value"] = spec.default_value ? json(*spec.default_value) : json(nullptr);
        if (!spec.value_meanings.empty()) rec["value_meaning"] = spec.value_meanings;
        out << rec.dump() << '\n';
    }
}

std::vector<EvidenceValue> parse_evidence_list(std::string_view literal) {
    std::string body = text::trim(literal);
    if (!body.empty() && body.front() == '[') body.erase(body.begin());
    if (!body.empty() && body.back() == ']') body.pop_back();
    std::vector<EvidenceValue> out;
    for (auto item : text::split(body, ',')) {
        item = text::trim(item);
        while (!item.empty() && (item.front() == '\'' || item.front() == '"')) item.erase(item.begin());
        while (!item.empty() && (item.back() == '\'' || item.back() == '"')) item.pop_back();
        if (item.empty()) continue;
        const auto at = item.find("_@_");
        if (at == std::string::npos) {
            out.push_back({item, std::nullopt});
        } else {
            out.push_back({item.substr(0, at), item.substr(at + 3)});
        }
    }
    return out;
}

CaseParseReport for_each_patient_case(std::istream& in, const EvidenceCatalog& catalog, ParseMode mode,
                                      const std::function<void(PatientCase&&)>& sink) {
    CaseParseReport report;
    std::vector<std::string> fields;
    std::size_t physical = 0;
    if (!read_csv_record(in, fields, physical)) return report;
    const Columns cols = locate_columns(fields);

    std::size_t row = 0;
    while (read_csv_record(in, fields, physical)) {
        if (fields.size() == 1 && text::is_blank(fields[0])) continue;
        ++row;
        ++report.rows_read;
        try {
            sink(decode_row(fields, cols, catalog, row));
            ++report.rows_accepted;
        } catch (const UnknownEvidenceCode& e) {
            if (mode == ParseMode::Strict) throw;
            report.violations.push_back({row, "unknown_evidence_code", e.evidence_code, "", e.what()});
        } catch (const ValueOutOfDomain& e) {
            if (mode == ParseMode::Strict) throw;
            report.violations.push_back({row, "value_out_of_domain", e.evidence_code, e.value, e.what()});
        } catch (const MalformedRow& e) {
            if (mode == ParseMode::Strict) throw;
            report.violations.push_back({row, "malformed_row", "", "", e.what()});
        }
    }
    return report;
}

CaseParseResult parse_patient_cases(std::istream& in, const EvidenceCatalog& catalog, ParseMode mode) {
    CaseParseResult result;
    auto report = for_each_patient_case(in, catalog, mode,
                                        [&](PatientCase&& pc) { result.cases.push_back(std::move(pc)); });
    result.violations = std::move(report.violations);
    return result;
}

DepartmentMapping DepartmentMapping::parse(std::istream& in) {
    std::map<std::string, Department> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto trimmed = text::trim(line);
        if (trimmed.empty() || trimmed.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw PreconditionViolation("department mapping line " + std::to_string(lineno) + " has no tab");
        }
        auto pathology = text::trim(line.substr(0, tab));
        Department dept(text::trim(line.substr(tab + 1)));
        if (pathology.empty() || dept.empty()) {
            throw PreconditionViolation("department mapping line " + std::to_string(lineno) + " has an empty field");
        }
        entries[std::move(pathology)] = std::move(dept);
    }
    return DepartmentMapping(std::move(entries));
}

const Department* DepartmentMapping::find(const std::string& pathology) const {
    auto it = entries_.find(pathology);
    return it == entries_.end() ? nullptr : &it->second;
}

DepartmentSet DepartmentMapping::departments() const {
    std::vector<Department> all;
    for (const auto& [_, d] : entries_) all.push_back(d);
    return DepartmentSet(std::move(all));
}

void DepartmentMapping::ensure_total(const std::set<std::string>& pathologies) const {
    std::vector<std::string> missing;
    for (const auto& p : pathologies) {
        if (!entries_.contains(p)) missing.push_back(p);
    }
    if (!missing.empty()) throw UnmappedPathology(text::join(missing, ", "));
}

Department department_of(const PatientCase& pc, const DepartmentMapping& mapping) {
    if (const auto* d = mapping.find(pc.pathology)) return *d;
    throw UnmappedPathology(pc.pathology);
}

StratifiedSelector::StratifiedSelector(const std::map<std::string, std::size_t>& stratum_sizes,
                                       const SamplingSpec& spec) {
    if (spec.n < 1) throw PreconditionViolation("sample size must be at least 1");
    std::vector<std::size_t> sizes;
    for (const auto& [_, s] : stratum_sizes) sizes.push_back(s);
    const std::size_t available = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (spec.n > available) throw InsufficientCases(spec.n, available);

    const auto seats = rng::largest_remainder(sizes, spec.n);
    rng::Engine eng(spec.seed);
    std::size_t i = 0;
    for (const auto& [name, size] : stratum_sizes) {
        allocation_[name] = seats[i];
        std::vector<bool> mask(size, false);
        for (auto pos : rng::choose_without_replacement(size, seats[i], eng)) mask[pos] = true;
        chosen_[name] = std::move(mask);
        ++i;
    }
}

bool StratifiedSelector::keep(const std::string& stratum, std::size_t ordinal) const {
    auto it = chosen_.find(stratum);
    return it != chosen_.end() && ordinal < it->second.size() && it->second[ordinal];
}

std::vector<PatientCase> sample_cases(const std::vector<PatientCase>& cases, const SamplingSpec& spec) {
    std::map<std::string, std::size_t> sizes;
    for (const auto& pc : cases) ++sizes[pc.pathology];
    const StratifiedSelector selector(sizes, spec);

    std::map<std::string, std::size_t> seen;
    std::vector<PatientCase> out;
    out.reserve(spec.n);
    for (const auto& pc : cases) {
        if (selector.keep(pc.pathology, seen[pc.pathology]++)) out.push_back(pc);
    }
    return out;
}

}  // namespace triage::ddxplus
