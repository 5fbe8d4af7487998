#include "vmass/error.hpp"

namespace vmass {

const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::Ok: return "ok";
    case ErrorCode::InputError: return "input_error";
    case ErrorCode::MalformedConfig: return "malformed_config";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::NonConvergence: return "non_convergence";
    case ErrorCode::Unresolved: return "unresolved";
    case ErrorCode::Inconsistent: return "inconsistent";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Internal: return "internal_error";
    }
    return "unknown";
}

} // namespace vmass
