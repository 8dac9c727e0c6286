#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace triage {

// Base of every error thrown by the library. `code()` is the stable,
// machine-readable identifier used in CLI exit messages and API bodies.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class PreconditionViolation : public Error {
public:
    explicit PreconditionViolation(const std::string& what)
        : Error("validation_failed", what) {}
};

// ---- ingestion -------------------------------------------------------------

class MalformedRecord : public Error {
public:
    MalformedRecord(std::string code, std::string reason, std::size_t line)
        : Error("validation_failed",
                "malformed record " + (code.empty() ? std::string("<unknown>") : code) +
                    " at line " + std::to_string(line) + ": " + reason),
          evidence_code(std::move(code)), reason(std::move(reason)), line(line) {}

    std::string evidence_code;
    std::string reason;
    std::size_t line;
};

// Row-level case errors carry the 1-based data row number.
class CaseRowError : public Error {
public:
    CaseRowError(const std::string& message, std::size_t row)
        : Error("validation_failed", message + " (row " + std::to_string(row) + ")"), row(row) {}

    std::size_t row;
};

class UnknownEvidenceCode : public CaseRowError {
public:
    UnknownEvidenceCode(std::string code, std::size_t row)
        : CaseRowError("unknown evidence code " + code, row), evidence_code(std::move(code)) {}

    std::string evidence_code;
};

class ValueOutOfDomain : public CaseRowError {
public:
    ValueOutOfDomain(std::string code, std::string value, std::size_t row)
        : CaseRowError("value '" + value + "' out of domain for " + code, row),
          evidence_code(std::move(code)), value(std::move(value)) {}

    std::string evidence_code;
    std::string value;
};

class MalformedRow : public CaseRowError {
public:
    MalformedRow(const std::string& reason, std::size_t row)
        : CaseRowError("malformed case row: " + reason, row) {}
};

class InsufficientCases : public Error {
public:
    InsufficientCases(std::size_t requested, std::size_t available)
        : Error("validation_failed", "requested " + std::to_string(requested) +
                                         " cases but only " + std::to_string(available) +
                                         " available") {}
};

class UnmappedPathology : public Error {
public:
    explicit UnmappedPathology(const std::string& pathologies)
        : Error("validation_failed", "unmapped pathology: " + pathologies) {}
};

// ---- synthesis -------------------------------------------------------------

class MissingVariant : public Error {
public:
    explicit MissingVariant(std::string code)
        : Error("validation_failed", "variant bank has no entry for " + code),
          evidence_code(std::move(code)) {}

    std::string evidence_code;
};

class MarkerCollision : public Error {
public:
    MarkerCollision(const std::string& marker, std::size_t turn_index)
        : Error("validation_failed", "turn " + std::to_string(turn_index) +
                                         " contains the end-of-turn marker '" + marker + "'"),
          turn_index(turn_index) {}

    std::size_t turn_index;
};

class MissingRecommendation : public Error {
public:
    explicit MissingRecommendation(const std::string& conv_id)
        : Error("validation_failed", "conversation " + conv_id + " has no department recommendation") {}
};

class InvalidHyperparameter : public Error {
public:
    explicit InvalidHyperparameter(std::string name)
        : Error("validation_failed", "invalid hyperparameter " + name), name(std::move(name)) {}

    std::string name;
};

// ---- history ---------------------------------------------------------------

class BudgetImpossible : public Error {
public:
    explicit BudgetImpossible(const std::string& what) : Error("validation_failed", what) {}
};

// ---- backend ---------------------------------------------------------------

class BackendError : public Error {
public:
    BackendError(bool retryable, int status, const std::string& message)
        : Error("backend_unavailable", "backend error (status " + std::to_string(status) + "): " + message),
          retryable(retryable), status(status) {}

    bool retryable;
    int status;  // 0 when no HTTP response was received
};

class TimeoutError : public BackendError {
public:
    explicit TimeoutError(const std::string& message) : BackendError(true, 0, "timeout: " + message) {}
};

// ---- triage engine ---------------------------------------------------------

class SessionNotFound : public Error {
public:
    explicit SessionNotFound(const std::string& id) : Error("session_not_found", "no session " + id) {}
};

class SessionClosed : public Error {
public:
    explicit SessionClosed(const std::string& id) : Error("session_closed", "session " + id + " is closed") {}
};

class EmptyMessage : public Error {
public:
    EmptyMessage() : Error("empty_message", "message text is empty") {}
};

class WrongPhase : public Error {
public:
    WrongPhase(const std::string& op, const std::string& phase)
        : Error("wrong_phase", op + " not allowed in phase " + phase) {}
};

// ---- evaluation ------------------------------------------------------------

class TooFewSamples : public Error {
public:
    explicit TooFewSamples(std::size_t n)
        : Error("validation_failed", "need at least 10 conversations to split, got " + std::to_string(n)) {}
};

class SingleClassTraining : public Error {
public:
    SingleClassTraining() : Error("validation_failed", "training data needs at least two departments") {}
};

class UnparseableJudgment : public Error {
public:
    explicit UnparseableJudgment(std::string conv_id)
        : Error("validation_failed", "no yes/no judgment for conversation " + conv_id),
          conversation_id(std::move(conv_id)) {}

    std::string conversation_id;
};

}  // namespace triage
