#pragma once

#include <stdexcept>
#include <string>

namespace capow {

enum class ErrorKind {
  schema,
  io,
  corrupt_log,
  empty_training_set,
  config,
  dimension,
  degenerate_model,
  protocol,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::schema: return "schema";
    case ErrorKind::io: return "io";
    case ErrorKind::corrupt_log: return "corrupt-log";
    case ErrorKind::empty_training_set: return "empty-training-set";
    case ErrorKind::config: return "config";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::degenerate_model: return "degenerate-model";
    case ErrorKind::protocol: return "protocol";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace capow
