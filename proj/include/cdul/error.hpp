#pragma once

#include <stdexcept>
#include <string>

namespace cdul {

// Error categories map to CLI exit codes: config=2, data=3, backend=4.
// Everything else (io, numeric, internal) exits 1.
enum class ErrorKind { config, data, backend, io, numeric, internal };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    int exit_code() const noexcept {
        switch (kind_) {
        case ErrorKind::config: return 2;
        case ErrorKind::data: return 3;
        case ErrorKind::backend: return 4;
        default: return 1;
        }
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace cdul
