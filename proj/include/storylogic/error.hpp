#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace storylogic {

// Root of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated precondition or type invariant.
class InvariantError : public Error {
public:
    using Error::Error;
};

// Corpus or record file that could not be decoded.
class CorpusError : public Error {
public:
    CorpusError(std::size_t line, std::string raw, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line), raw_(std::move(raw)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& raw() const noexcept { return raw_; }

private:
    std::size_t line_;
    std::string raw_;
};

// Model output with no recognizable structure.
class UnparseableError : public Error {
public:
    UnparseableError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}

    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

// Emotion token outside the closed nine-label set.
class UnknownLabelError : public Error {
public:
    explicit UnknownLabelError(std::string token)
        : Error("unknown emotion label '" + token + "'"), token_(std::move(token)) {}

    const std::string& token() const noexcept { return token_; }

private:
    std::string token_;
};

// Gap index outside the open interval (1, n).
class RangeError : public Error {
public:
    RangeError(long k, long n)
        : Error("gap index " + std::to_string(k) + " outside (1, " + std::to_string(n) + ")"),
          k_(k), n_(n) {}

    long k() const noexcept { return k_; }
    long n() const noexcept { return n_; }

private:
    long k_;
    long n_;
};

// Template placeholder with no bound variable, or a malformed catalog.
class TemplateError : public Error {
public:
    using Error::Error;
};

} // namespace storylogic
