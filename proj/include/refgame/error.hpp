#pragma once

#include <stdexcept>
#include <string>

namespace refgame {

// Mirrors rg_status in refgame.h; keep the numeric values in sync.
enum class ErrorCode : int {
    invalid_argument = 1,
    shape_mismatch = 2,
    not_found = 3,
    conflict = 4,
    dependency = 5,
    version_mismatch = 6,
    io = 7,
    forbidden = 8,
    internal = 9,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) throw Error(code, message);
}

}  // namespace refgame
