#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tap {

enum class Errc {
  NotSealed,
  WrongKey,
  EmptyTable,
  ZeroLength,
  IndexCollision,
  BeforeStart,
  MissingExtras,
  UnknownIndexValue,
  NotInWindow,
  OutOfRange,
  HeadMismatch,
  WrongGroupKey,
  RetrievalFailed,
  SegmentMismatch,
  NoBroadcastSeen,
  NoTicket,
  ScenarioRoutingFailure,
  UnderivableSpoof,
  BudgetExhausted,
  ConfigParse,
  Malformed,
};

std::string_view to_string(Errc code);

/// Every failure raised by the library. `cause` is set when an error wraps
/// another one (e.g. RetrievalFailed wrapping NotInWindow).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<Errc> cause = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        cause_(cause) {}

  Errc code() const noexcept { return code_; }
  std::optional<Errc> cause() const noexcept { return cause_; }

 private:
  Errc code_;
  std::optional<Errc> cause_;
};

}  // namespace tap
