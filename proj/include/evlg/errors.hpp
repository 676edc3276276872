#pragma once

#include <stdexcept>
#include <string>

namespace evlg {

enum class ErrorCategory {
    Dimension,
    Index,
    Contract,
    Config,
    Checkpoint,
    Training,
};

const char* category_name(ErrorCategory category);

// Base of every error raised by the library. The category drives the CLI exit code.
class Error : public std::runtime_error {
   public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

   private:
    ErrorCategory category_;
};

class DimensionError : public Error {
   public:
    explicit DimensionError(const std::string& message) : Error(ErrorCategory::Dimension, message) {}
};

class IndexError : public Error {
   public:
    explicit IndexError(const std::string& message) : Error(ErrorCategory::Index, message) {}
};

class ContractError : public Error {
   public:
    explicit ContractError(const std::string& message) : Error(ErrorCategory::Contract, message) {}
};

class ConfigError : public Error {
   public:
    explicit ConfigError(const std::string& message) : Error(ErrorCategory::Config, message) {}
};

class CheckpointError : public Error {
   public:
    explicit CheckpointError(const std::string& message) : Error(ErrorCategory::Checkpoint, message) {}
};

class TrainingError : public Error {
   public:
    explicit TrainingError(const std::string& message) : Error(ErrorCategory::Training, message) {}
};

}  // namespace evlg
