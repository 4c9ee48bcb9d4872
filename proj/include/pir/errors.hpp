#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pir {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record file line could not be parsed. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Records parsed but violate a type invariant. Carries the offending ids.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::vector<std::string> ids)
      : Error(what + format_ids(ids)), ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  static std::string format_ids(const std::vector<std::string>& ids) {
    if (ids.empty()) return {};
    std::string out = " [";
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ", ";
      out += ids[i];
    }
    return out + "]";
  }
  std::vector<std::string> ids_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Transport failure that outlived the retry budget.
class BackendError : public Error {
 public:
  using Error::Error;
};

/// The backend answered, but the answer breaks the wire contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// LLM segmentation output could not be anchored in the source text.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// LLM classifier never produced a label from the vocabulary.
class ClassificationError : public Error {
 public:
  using Error::Error;
};

/// Removing the requested step would leave no reasoning at all.
class DegenerateRemovalError : public Error {
 public:
  using Error::Error;
};

}  // namespace pir
