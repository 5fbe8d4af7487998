#pragma once

#include <stdexcept>
#include <string>

namespace vmass {

// Numeric values are part of the C ABI (see vmass.h) and of the CLI exit codes.
enum class ErrorCode : int {
    Ok = 0,
    InputError = 2,
    MalformedConfig = 3,
    Infeasible = 4,
    NonConvergence = 5,
    Unresolved = 6,
    Inconsistent = 7,
    Io = 8,
    Internal = 9,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool cond, const std::string& what) {
    if (!cond) fail(ErrorCode::InputError, what);
}

} // namespace vmass
