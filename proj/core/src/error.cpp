#include "fcns/error.hpp"

namespace fcns {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kRange: return "range error";
    case ErrorKind::kEmptyInput: return "empty input";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kLabel: return "label error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kPreprocess: return "preprocessing error";
    case ErrorKind::kUndefinedMetric: return "undefined metric";
    case ErrorKind::kAggregation: return "aggregation error";
    case ErrorKind::kGrouping: return "grouping error";
    case ErrorKind::kDegenerateClass: return "degenerate class";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

namespace {

std::string compose(ErrorKind kind, const std::string& message) {
  std::string out(to_string(kind));
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, const std::string& message,
             std::vector<std::string> details)
    : std::runtime_error(compose(kind, message)),
      kind_(kind),
      details_(std::move(details)) {}

void raise(ErrorKind kind, const std::string& message,
           std::vector<std::string> details) {
  throw Error(kind, message, std::move(details));
}

}  // namespace fcns
