#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace canvas_search {

/// Broad failure category; the CLI maps these onto exit codes.
enum class ErrorKind {
    Usage,     // bad flags or arguments
    Data,      // malformed or inconsistent input data
    Internal,  // violated internal invariant
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
            : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised when validation finds one or more problems. Every issue is kept so
/// callers can report all of them at once.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> issues);

    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    std::vector<std::string> issues_;
};

[[noreturn]] inline void throw_data(const std::string& msg) {
    throw Error(ErrorKind::Data, msg);
}

[[noreturn]] inline void throw_usage(const std::string& msg) {
    throw Error(ErrorKind::Usage, msg);
}

[[noreturn]] inline void throw_internal(const std::string& msg) {
    throw Error(ErrorKind::Internal, msg);
}

} // namespace canvas_search
