#pragma once

#include <stdexcept>
#include <string>

namespace pam {

/// Broad failure classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
    InvalidParameter,
    Format,
    Window,
    Resource,
    Convergence,
    Accuracy,
    Stiffness,
    DegenerateInput,
    DivergentIntegral,
    InsufficientTruncation,
    InsufficientData,
    StatisticalPower,
    InternalConsistency,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidParameter: return "invalid-parameter";
    case ErrorKind::Format: return "format";
    case ErrorKind::Window: return "window";
    case ErrorKind::Resource: return "resource";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::Accuracy: return "accuracy";
    case ErrorKind::Stiffness: return "stiffness";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::DivergentIntegral: return "divergent-integral";
    case ErrorKind::InsufficientTruncation: return "insufficient-truncation";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::StatisticalPower: return "statistical-power";
    case ErrorKind::InternalConsistency: return "internal-consistency";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised by iterative solvers; carries the best residual reached.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double best_residual)
        : Error(ErrorKind::Convergence, what + " (best residual " + std::to_string(best_residual) + ")"),
          best_residual_(best_residual) {}

    double best_residual() const noexcept { return best_residual_; }

private:
    double best_residual_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
    if (!condition) fail(kind, what);
}

/// 0 success, 2 config/parameter error, 3 numeric or convergence error, 4 resource error.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidParameter:
    case ErrorKind::Format:
    case ErrorKind::Window:
        return 2;
    case ErrorKind::Resource:
        return 4;
    default:
        return 3;
    }
}

} // namespace pam
