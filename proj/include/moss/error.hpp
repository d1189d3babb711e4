#pragma once

#include <stdexcept>
#include <string>

namespace moss {

/// Precondition or argument violations (bad shapes, unknown tags, alpha <= 0, ...).
class DomainError : public std::invalid_argument {
public:
    explicit DomainError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Requested more samples than a pool can supply.
class CapacityError : public std::runtime_error {
public:
    explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite loss during training or transfer. Carries where it happened.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& stage, int epoch, int batch)
        : std::runtime_error(stage + " diverged at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch)),
          stage_(stage), epoch_(epoch), batch_(batch) {}

    const std::string& stage() const { return stage_; }
    int epoch() const { return epoch_; }
    int batch() const { return batch_; }

private:
    std::string stage_;
    int epoch_;
    int batch_;
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace moss
