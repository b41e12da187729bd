#pragma once

#include <stdexcept>
#include <string>

namespace anomhead {

// Every failure raised by the library derives from Error and carries a
// category tag. The CLI prints the tag as a prefix and maps it to an exit code.
enum class ErrorCategory { Config, Format, Compat, Validation, Dimension, Metric };

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return "CONFIG";
    case ErrorCategory::Format: return "FORMAT";
    case ErrorCategory::Compat: return "COMPAT";
    case ErrorCategory::Validation: return "VALIDATION";
    case ErrorCategory::Dimension: return "COMPAT";
    case ErrorCategory::Metric: return "VALIDATION";
  }
  return "ERROR";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorCategory::Format, what) {}
};

struct CompatError : Error {
  explicit CompatError(const std::string& what) : Error(ErrorCategory::Compat, what) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorCategory::Validation, what) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error(ErrorCategory::Dimension, what) {}
};

// AUROC / F1 requested on a population where the metric is undefined.
struct MetricError : Error {
  explicit MetricError(const std::string& what) : Error(ErrorCategory::Metric, what) {}
};

}  // namespace anomhead
