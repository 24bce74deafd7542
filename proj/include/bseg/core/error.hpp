#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bseg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file content. Carries the byte offset of the offending field.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

/// Mismatched or invalid array dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value violates the type contract (e.g. a non-binary mask where a binary one is required).
class TypeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Result is mathematically undefined for the given input (empty surfaces, zero denominators).
class UndefinedResultError : public Error {
public:
    using Error::Error;
};

/// Statistical test input carries no information (all paired differences zero, too few samples).
class DegenerateSampleError : public Error {
public:
    using Error::Error;
};

/// Refusal to run an exact/brute-force routine beyond its size cap.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// Non-finite value encountered during numeric computation.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t iteration)
        : Error(what), iteration_(iteration) {}
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

/// A pipeline stage failed; wraps the underlying error message.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), stage_(stage) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace bseg
