#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace metasub {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::string file)
      : Error(what), file_(std::move(file)) {}
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

/// Invalid argument attributed to a named (config) field.
class ValidationError : public ArgumentError {
 public:
  ValidationError(std::string field, const std::string& what)
      : ArgumentError(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Non-finite value met during a forward pass. `param_index` is the first
/// non-finite entry of theta, or npos when theta itself is finite and the
/// overflow happened downstream.
class NumericError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  NumericError(const std::string& what, std::size_t param_index)
      : Error(what), param_index_(param_index) {}
  std::size_t param_index() const { return param_index_; }

 private:
  std::size_t param_index_;
};

class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class DisconnectedGraphError : public Error {
 public:
  DisconnectedGraphError(const std::string& what,
                         std::vector<std::vector<std::size_t>> components)
      : Error(what), components_(std::move(components)) {}
  const std::vector<std::vector<std::size_t>>& components() const { return components_; }

 private:
  std::vector<std::vector<std::size_t>> components_;
};

}  // namespace metasub
