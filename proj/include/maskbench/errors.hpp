#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maskbench {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

// Raised for anything that is wrong with user-supplied configuration.
// `path` names the offending field, e.g. "defense.gradient_mode".
class ConfigError : public Error {
public:
    ConfigError(std::string path, const std::string& what)
        : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public NonFiniteError {
public:
    TrainingDiverged(std::size_t epoch, const std::string& what)
        : NonFiniteError("training diverged at epoch " + std::to_string(epoch) + ": " + what),
          epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

} // namespace maskbench
