#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fcns {

enum class ErrorKind {
  kRange,
  kEmptyInput,
  kValidation,
  kParse,
  kConfig,
  kShape,
  kLabel,
  kFormat,
  kPreprocess,
  kUndefinedMetric,
  kAggregation,
  kGrouping,
  kDegenerateClass,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::vector<std::string> details = {});

  ErrorKind kind() const noexcept { return kind_; }
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  ErrorKind kind_;
  std::vector<std::string> details_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message,
                        std::vector<std::string> details = {});

}  // namespace fcns
