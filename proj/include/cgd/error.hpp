#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cgd {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a documented precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// An object is missing data that the requested operation needs
/// (e.g. scoring a sentence that carries no similarity).
class InvalidState : public Error {
 public:
  using Error::Error;
};

/// A metric is mathematically undefined on the given data
/// (e.g. AUROC over a single class).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// Sampling derivation fields. Every sampled sentence is a pure function of
/// these plus the prefix, which makes retries and concurrent fan-out safe.
struct Derivation {
  std::uint64_t seed = 0;
  int step = 0;
  int parent_slot = 0;
  int sample_slot = 0;

  friend auto operator<=>(const Derivation&, const Derivation&) = default;
};

std::string to_string(const Derivation& d);

enum class BackendErrorKind {
  transport,           // connection refused, timeout, reset
  malformed_reply,     // body is not a valid reply record
  server_status,       // non-2xx status from the server
  protocol_violation,  // reply parsed but breaks the contract (range, echo)
  world_miss,          // mock: no script entry for the request
};

std::string_view to_string(BackendErrorKind kind);

/// Failure reported by a generator or guide backend. Carries the retry
/// metadata of the last attempt and, once the engine has seen it, the
/// derivation fields of the failing request.
class BackendError : public Error {
 public:
  BackendError(BackendErrorKind kind, std::string message, int attempts = 1,
               int http_status = 0, std::string code = {})
      : Error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        detail_(std::move(message)),
        attempts_(attempts),
        http_status_(http_status),
        code_(std::move(code)) {}

  BackendErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }
  int attempts() const noexcept { return attempts_; }
  int http_status() const noexcept { return http_status_; }
  const std::string& code() const noexcept { return code_; }
  const std::optional<Derivation>& derivation() const noexcept { return derivation_; }

  BackendError with_derivation(const Derivation& d) const {
    BackendError copy = *this;
    copy.derivation_ = d;
    return copy;
  }

 private:
  BackendErrorKind kind_;
  std::string detail_;
  int attempts_;
  int http_status_;
  std::string code_;
  std::optional<Derivation> derivation_;
};

inline std::string to_string(const Derivation& d) {
  return "seed=" + std::to_string(d.seed) + " step=" + std::to_string(d.step) +
         " parent_slot=" + std::to_string(d.parent_slot) +
         " sample_slot=" + std::to_string(d.sample_slot);
}

inline std::string_view to_string(BackendErrorKind kind) {
  switch (kind) {
    case BackendErrorKind::transport: return "transport";
    case BackendErrorKind::malformed_reply: return "malformed_reply";
    case BackendErrorKind::server_status: return "server_status";
    case BackendErrorKind::protocol_violation: return "protocol_violation";
    case BackendErrorKind::world_miss: return "world_miss";
  }
  return "unknown";
}

}  // namespace cgd
