#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ckit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class SelectionError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::vector<double> best = {})
      : Error(what), best_(std::move(best)) {}
  const std::vector<double>& best_iterate() const { return best_; }

 private:
  std::vector<double> best_;
};

class DegenerateNeighborhoodError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class RepetitionError : public Error {
 public:
  RepetitionError(std::size_t rep, const std::string& what)
      : Error("repetition " + std::to_string(rep) + ": " + what), rep_(rep) {}
  std::size_t repetition() const { return rep_; }

 private:
  std::size_t rep_;
};

}  // namespace ckit
