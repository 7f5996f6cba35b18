#ifndef EPI_ERRORS_HPP
#define EPI_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace epi {

enum class ErrorCode {
    NEGATIVE_RATE,
    KAPPA_DIAGONAL,
    GAMMA_RANGE,
    DIM_MISMATCH,
    NEGATIVE_TIME,
    UNSUPPORTED_JOINT,
    OFF_GRID,
    EMPTY_POPULATION,
    SCHEDULE_OVERFLOW,
    HORIZON_MISMATCH,
    NO_CONVERGENCE,
    GRID_MISMATCH,
    BAD_INIT,
    DELAY_OFF_GRID,
    FCLT_INADMISSIBLE,
    UNKNOWN_FAMILY,
    NOT_PSD,
    SINGULAR_STEP,
    PARSE_ERROR,
    SCHEMA_VIOLATION,
    VALIDATION,
    INSUFFICIENT_REPLICATES,
};

const char* to_string(ErrorCode code);

/// Exception carrying a machine-readable code plus a human-readable detail.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::NEGATIVE_RATE: return "NEGATIVE_RATE";
        case ErrorCode::KAPPA_DIAGONAL: return "KAPPA_DIAGONAL";
        case ErrorCode::GAMMA_RANGE: return "GAMMA_RANGE";
        case ErrorCode::DIM_MISMATCH: return "DIM_MISMATCH";
        case ErrorCode::NEGATIVE_TIME: return "NEGATIVE_TIME";
        case ErrorCode::UNSUPPORTED_JOINT: return "UNSUPPORTED_JOINT";
        case ErrorCode::OFF_GRID: return "OFF_GRID";
        case ErrorCode::EMPTY_POPULATION: return "EMPTY_POPULATION";
        case ErrorCode::SCHEDULE_OVERFLOW: return "SCHEDULE_OVERFLOW";
        case ErrorCode::HORIZON_MISMATCH: return "HORIZON_MISMATCH";
        case ErrorCode::NO_CONVERGENCE: return "NO_CONVERGENCE";
        case ErrorCode::GRID_MISMATCH: return "GRID_MISMATCH";
        case ErrorCode::BAD_INIT: return "BAD_INIT";
        case ErrorCode::DELAY_OFF_GRID: return "DELAY_OFF_GRID";
        case ErrorCode::FCLT_INADMISSIBLE: return "FCLT_INADMISSIBLE";
        case ErrorCode::UNKNOWN_FAMILY: return "UNKNOWN_FAMILY";
        case ErrorCode::NOT_PSD: return "NOT_PSD";
        case ErrorCode::SINGULAR_STEP: return "SINGULAR_STEP";
        case ErrorCode::PARSE_ERROR: return "PARSE_ERROR";
        case ErrorCode::SCHEMA_VIOLATION: return "SCHEMA_VIOLATION";
        case ErrorCode::VALIDATION: return "VALIDATION";
        case ErrorCode::INSUFFICIENT_REPLICATES: return "INSUFFICIENT_REPLICATES";
    }
    return "UNKNOWN";
}

} // namespace epi

#endif
