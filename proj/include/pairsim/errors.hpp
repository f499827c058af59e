#pragma once

#include <stdexcept>
#include <string>

namespace pairsim {

// Physically meaningless input (negative width, energy conservation violated, ...).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

// Malformed or inconsistent configuration; `path` names the offending field.
class ConfigError : public std::runtime_error {
public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

// Not enough events to extract a result (fit precondition or wing statistics).
class StatisticsError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace pairsim
