#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace methylgraph {

/// Broad failure classes. The CLI maps each onto its exit code.
enum class ErrorKind { validation, numeric, io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

/// Caller-supplied data violates a precondition (sizes, duplicates, ranges).
class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

/// Non-finite values, degenerate distributions, degenerate geometry.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Iterative fit did not converge.
class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, double best_log_likelihood)
        : NumericError(what), best_log_likelihood_(best_log_likelihood) {}
    double best_log_likelihood() const noexcept { return best_log_likelihood_; }

private:
    double best_log_likelihood_;
};

/// File is missing, unreadable, malformed or corrupt.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

/// Malformed row in an ingested text file.
class IngestionError : public InputError {
public:
    IngestionError(const std::string& path, std::size_t line, const std::string& what)
        : InputError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Binary payload disagrees with its header.
class CorruptionError : public IoError {
public:
    explicit CorruptionError(const std::string& what) : IoError(what) {}
};

/// A metric is not defined for the given cohort (e.g. only one class present).
class MetricUndefinedError : public InputError {
public:
    explicit MetricUndefinedError(const std::string& what) : InputError(what) {}
};

/// Two prediction sets that must describe the same patients do not.
class PairingError : public InputError {
public:
    explicit PairingError(const std::string& what) : InputError(what) {}
};

/// Too few patients of a class to give every fold one.
class StratificationError : public InputError {
public:
    explicit StratificationError(const std::string& what) : InputError(what) {}
};

}  // namespace methylgraph
