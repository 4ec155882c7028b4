#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace invdesign {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidEncoding : public Error { using Error::Error; };
class InvalidMaterial : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ShapeMismatch : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

/// Malformed dataset / checkpoint / spectra record. Carries the 1-based line
/// number (0 when not line oriented) and the record id when one was parsed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t line = 0, std::string record_id = {})
        : Error(decorate(what, line, record_id)), line_(line), record_id_(std::move(record_id)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string& record_id() const noexcept { return record_id_; }

private:
    static std::string decorate(const std::string& what, std::size_t line, const std::string& id) {
        std::string out = "format error";
        if (line > 0) out += " at line " + std::to_string(line);
        if (!id.empty()) out += " (record '" + id + "')";
        return out + ": " + what;
    }

    std::size_t line_;
    std::string record_id_;
};

class EmptySplit : public Error { using Error::Error; };
class EmptyTestSet : public EmptySplit { using EmptySplit::EmptySplit; };
class EmptyTrainSet : public EmptySplit { using EmptySplit::EmptySplit; };

class NonFiniteLoss : public Error {
public:
    explicit NonFiniteLoss(std::int64_t step)
        : Error("non-finite loss at training step " + std::to_string(step)), step_(step) {}
    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

}  // namespace invdesign
