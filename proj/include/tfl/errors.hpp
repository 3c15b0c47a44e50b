#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tfl {

// Base for every error the library raises. kind() is the stable machine-readable tag
// the CLI puts into its error record.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& what) : Error("argument", what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error("format", what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error("validation", what) {}
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& term, std::size_t batch, const std::string& what)
        : Error("training", what), term_(term), batch_(batch) {}
    const std::string& term() const noexcept { return term_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::string term_;
    std::size_t batch_;
};

}  // namespace tfl
