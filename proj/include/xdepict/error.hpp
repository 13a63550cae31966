#pragma once

#include <stdexcept>
#include <string>

namespace xdepict {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A tensor's shape did not match what an operation requires.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Training produced a NaN or Inf loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// A referenced sample, checkpoint or file entry does not exist.
class NotFoundError : public Error {
public:
    using Error::Error;
};

// Problems reading or writing one of the binary containers (checkpoint, index).
class FormatError : public Error {
public:
    enum class Kind { io, bad_magic, truncated, bad_header, shape_mismatch, arch_mismatch };

    FormatError(Kind kind, std::string tensor, const std::string& message)
        : Error(message), kind_(kind), tensor_(std::move(tensor)) {}

    Kind kind() const noexcept { return kind_; }
    // Name of the offending tensor; empty when the error is not tensor specific.
    const std::string& tensor() const noexcept { return tensor_; }

private:
    Kind kind_;
    std::string tensor_;
};

}  // namespace xdepict
