#pragma once

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace emocause {

enum class ErrorKind {
  kConfiguration,
  kInvalidInput,
  kNotInTaxonomy,
  kValidation,
  kAuth,
  kRateLimited,
  kTimeout,
  kProvider,
  kMissingFixture,
  kEmptyText,
  kNotFound,
  kIo,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfiguration: return "ConfigurationError";
    case ErrorKind::kInvalidInput: return "InvalidInput";
    case ErrorKind::kNotInTaxonomy: return "NotInTaxonomy";
    case ErrorKind::kValidation: return "ValidationError";
    case ErrorKind::kAuth: return "AuthError";
    case ErrorKind::kRateLimited: return "RateLimited";
    case ErrorKind::kTimeout: return "Timeout";
    case ErrorKind::kProvider: return "ProviderError";
    case ErrorKind::kMissingFixture: return "MissingFixture";
    case ErrorKind::kEmptyText: return "EmptyText";
    case ErrorKind::kNotFound: return "NotFound";
    case ErrorKind::kIo: return "IoError";
  }
  return "Error";
}

/// Single exception type for the library; callers branch on kind().
/// Provider errors additionally carry the HTTP status (0 when not applicable).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, int status = 0)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        status_(status) {}

  ErrorKind kind() const noexcept { return kind_; }
  int status() const noexcept { return status_; }

  /// Server-requested delay before retrying, when one was sent.
  std::optional<std::chrono::milliseconds> retry_after() const noexcept { return retry_after_; }
  Error& with_retry_after(std::optional<std::chrono::milliseconds> d) {
    retry_after_ = d;
    return *this;
  }

  /// Rate limits, timeouts, transport failures and 5xx replies.
  bool transient() const noexcept {
    return kind_ == ErrorKind::kRateLimited || kind_ == ErrorKind::kTimeout ||
           (kind_ == ErrorKind::kProvider && (status_ == 0 || status_ >= 500));
  }

 private:
  ErrorKind kind_;
  int status_;
  std::optional<std::chrono::milliseconds> retry_after_;
};

}  // namespace emocause
