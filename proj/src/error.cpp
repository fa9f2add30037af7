#include "refgame/error.hpp"

namespace refgame {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::shape_mismatch: return "shape_mismatch";
        case ErrorCode::not_found: return "not_found";
        case ErrorCode::conflict: return "conflict";
        case ErrorCode::dependency: return "dependency";
        case ErrorCode::version_mismatch: return "version_mismatch";
        case ErrorCode::io: return "io";
        case ErrorCode::forbidden: return "forbidden";
        case ErrorCode::internal: return "internal";
    }
    return "unknown";
}

}  // namespace refgame
