#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace basetts {

enum class ErrorKind {
  kConfig,
  kEmptyInput,
  kIngestion,
  kData,
  kNumerical,
  kContextOverflow,
  kLossUndefined,
  kUndefinedMetric,
  kDependency,
  kDataIntegrity,
  kCompleteness,
  kIo,
};

std::string_view ErrorKindName(ErrorKind kind);

// All library failures surface as this exception; `kind()` lets callers
// (and tests) distinguish the failure class without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace basetts
