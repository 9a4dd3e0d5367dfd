#pragma once

#include <stdexcept>
#include <string>

namespace drouter {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    data = 3,
    numerical = 4,
};

/// Base class for every error the library raises on purpose.
class Error : public std::runtime_error {
public:
    Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ExitCode::config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

// Caller broke a documented precondition (bad index, wrong length, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error(ExitCode::data, what) {}
};

class EmptyFeasibleSetError : public NumericalError {
public:
    EmptyFeasibleSetError() : NumericalError("allocation requested for an empty feasible expert set") {}
};

class DegenerateSupportError : public NumericalError {
public:
    explicit DegenerateSupportError(double denom)
        : NumericalError("conditional allocation denominator " + std::to_string(denom) +
                         " is below the stability clamp") {}
};

class DegeneratePolicyError : public NumericalError {
public:
    DegeneratePolicyError() : NumericalError("masked simplex projection of a vector with zero feasible mass") {}
};

class InfeasibleConstraintError : public NumericalError {
public:
    explicit InfeasibleConstraintError(const std::string& what) : NumericalError(what) {}
};

}  // namespace drouter
