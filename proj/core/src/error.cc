#include "basetts/error.h"

namespace basetts {

std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kEmptyInput: return "empty-input error";
    case ErrorKind::kIngestion: return "ingestion error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kNumerical: return "numerical error";
    case ErrorKind::kContextOverflow: return "context-overflow error";
    case ErrorKind::kLossUndefined: return "loss-undefined error";
    case ErrorKind::kUndefinedMetric: return "undefined-metric error";
    case ErrorKind::kDependency: return "dependency error";
    case ErrorKind::kDataIntegrity: return "data-integrity error";
    case ErrorKind::kCompleteness: return "completeness error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + message),
      kind_(kind) {}

}  // namespace basetts
