#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace wpo {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration field missing or of the wrong type. Carries the field path.
class SchemaError : public Error {
public:
    SchemaError(std::string field, const std::string& what)
        : Error("schema error at '" + field + "': " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class InvariantError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class OverflowError : public Error { using Error::Error; };
class NonConvergence : public Error { using Error::Error; };
class SingularSystem : public Error { using Error::Error; };
class UnsupportedRho : public Error { using Error::Error; };
class InsufficientData : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

/// Failure inside a flow step. run_flow rethrows with the failing time attached.
class FlowStepError : public Error {
public:
    using Error::Error;
    std::optional<double> time;
};

class NegativeDensity : public FlowStepError { using FlowStepError::FlowStepError; };
class StepRejected : public FlowStepError { using FlowStepError::FlowStepError; };

class EnvelopeViolation : public Error {
public:
    EnvelopeViolation(std::size_t record, double t, const std::string& what)
        : Error(what), record_(record), t_(t) {}
    std::size_t record() const noexcept { return record_; }
    double time() const noexcept { return t_; }

private:
    std::size_t record_;
    double t_;
};

} // namespace wpo
