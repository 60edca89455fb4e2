#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dag {

inline const char* version() { return "dag 0.1.0"; }

enum class ErrorKind {
    config,   // bad flags, bad config keys, bounds violations
    numeric,  // NaN/Inf surfaced from a computation
    io,       // file system failures
    contract  // violated internal precondition (shape mismatch etc.)
};

struct Error : std::runtime_error {
    ErrorKind kind;
    Error(ErrorKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

[[noreturn]] inline void fail(ErrorKind k, const std::string& msg) { throw Error(k, msg); }

// exit codes used by the CLI: 0 ok, 2 usage/config, 3 numeric, 4 io
inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::numeric: return 3;
        case ErrorKind::io: return 4;
        default: return 2;
    }
}

#define DAG_CHECK(cond, kind, msg)                         \
    do {                                                   \
        if (!(cond)) ::dag::fail(::dag::ErrorKind::kind, msg); \
    } while (0)

}  // namespace dag
