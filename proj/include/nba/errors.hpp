#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nba {

// Base of every error the engine throws. `code()` is a stable machine-readable
// tag used by the CLI (exit codes) and the HTTP service (error bodies).
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t row, const std::string& message)
        : Error("parse_error", "row " + std::to_string(row) + ": " + message), row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& m) : Error("schema_error", m) {}
};
struct VocabularyError : Error {
    explicit VocabularyError(const std::string& m) : Error("unknown_activity", m) {}
};
struct BoundsError : Error {
    explicit BoundsError(const std::string& m) : Error("out_of_bounds", m) {}
};
struct TerminationError : Error {
    explicit TerminationError(const std::string& m) : Error("already_terminated", m) {}
};
struct SplitError : Error {
    explicit SplitError(const std::string& m) : Error("split_error", m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& m) : Error("training_diverged", m) {}
};
struct PreconditionError : Error {
    explicit PreconditionError(const std::string& m) : Error("precondition_failed", m) {}
};
struct QueryError : Error {
    explicit QueryError(const std::string& m) : Error("query_error", m) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& m) : Error("undeclared_activity", m) {}
};
struct StateError : Error {
    explicit StateError(const std::string& m) : Error("case_terminated", m) {}
};
struct ExecutionError : Error {
    explicit ExecutionError(const std::string& m) : Error("not_enabled", m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io_error", m) {}
};
struct ArtifactError : Error {
    explicit ArtifactError(const std::string& m) : Error("artifact_error", m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

} // namespace nba
