#pragma once

#include <stdexcept>
#include <string>

namespace mop {

/// Base of every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input, bad configuration or a violated precondition. The CLI maps it to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A malformed line in a record or persona file.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : ValidationError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Failure talking to a remote backend or embedder, after retries.
class TransportError : public Error {
public:
    TransportError(const std::string& endpoint, int attempts, int last_status, const std::string& what)
        : Error(endpoint + ": " + what + " (attempts=" + std::to_string(attempts) +
                ", last_status=" + std::to_string(last_status) + ")"),
          endpoint_(endpoint), attempts_(attempts), last_status_(last_status) {}

    const std::string& endpoint() const noexcept { return endpoint_; }
    int attempts() const noexcept { return attempts_; }
    /// HTTP status of the last attempt, or -1 when no response arrived.
    int last_status() const noexcept { return last_status_; }

private:
    std::string endpoint_;
    int attempts_;
    int last_status_;
};

/// Non-finite loss or gradient.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace mop
