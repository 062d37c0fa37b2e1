#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cwb {

enum class Errc {
  // definitions
  MissingField,
  UnknownProvider,
  DanglingRoleReference,
  DuplicateMetricName,
  DuplicateRole,
  BadRecipeRef,
  BadAttributes,
  BadScale,
  BadSchedule,
  InvalidOverridePath,
  // state machine
  IllegalTransition,
  EmptyLog,
  // cron
  SyntaxError,
  FieldOutOfRange,
  UnsatisfiableExpression,
  // providers
  QuotaExceeded,
  ProviderUnavailable,
  AcquireFailed,
  ReadinessTimeout,
  ResourceReleased,
  ConnectionLost,
  NonZeroExit,
  PayloadTooLarge,
  ReleaseFailed,
  // provisioning
  RecipeNotFound,
  DuplicateRecipe,
  BadRecipe,
  StepFailed,
  NotInDevMode,
  ResourcesAlreadyReleased,
  // orchestration
  BenchmarkNotFound,
  BenchmarkInactive,
  ExecutionNotFound,
  InvalidState,
  AlreadyTerminal,
  NoCapacity,
  // results
  UnknownMetric,
  ScaleMismatch,
  ExecutionNotAcceptingResults,
  BadHeader,
  RowError,
  InsufficientData,
  ZeroMean,
  ScaleUnsupported,
  // gateway / agent
  Unauthorized,
  Conflict,
  BadConfig,
  BadRequest,
  StoreUnavailable,
  PortInUse,
  Transport,
};

std::string_view errc_name(Errc code);
std::optional<Errc> parse_errc(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace cwb
