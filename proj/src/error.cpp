#include "cwb/error.hpp"

namespace cwb {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MissingField: return "MissingField";
    case Errc::UnknownProvider: return "UnknownProvider";
    case Errc::DanglingRoleReference: return "DanglingRoleReference";
    case Errc::DuplicateMetricName: return "DuplicateMetricName";
    case Errc::DuplicateRole: return "DuplicateRole";
    case Errc::BadRecipeRef: return "BadRecipeRef";
    case Errc::BadAttributes: return "BadAttributes";
    case Errc::BadScale: return "BadScale";
    case Errc::BadSchedule: return "BadSchedule";
    case Errc::InvalidOverridePath: return "InvalidOverridePath";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::EmptyLog: return "EmptyLog";
    case Errc::SyntaxError: return "SyntaxError";
    case Errc::FieldOutOfRange: return "FieldOutOfRange";
    case Errc::UnsatisfiableExpression: return "UnsatisfiableExpression";
    case Errc::QuotaExceeded: return "QuotaExceeded";
    case Errc::ProviderUnavailable: return "ProviderUnavailable";
    case Errc::AcquireFailed: return "AcquireFailed";
    case Errc::ReadinessTimeout: return "ReadinessTimeout";
    case Errc::ResourceReleased: return "ResourceReleased";
    case Errc::ConnectionLost: return "ConnectionLost";
    case Errc::NonZeroExit: return "NonZeroExit";
    case Errc::PayloadTooLarge: return "PayloadTooLarge";
    case Errc::ReleaseFailed: return "ReleaseFailed";
    case Errc::RecipeNotFound: return "RecipeNotFound";
    case Errc::DuplicateRecipe: return "DuplicateRecipe";
    case Errc::BadRecipe: return "BadRecipe";
    case Errc::StepFailed: return "StepFailed";
    case Errc::NotInDevMode: return "NotInDevMode";
    case Errc::ResourcesAlreadyReleased: return "ResourcesAlreadyReleased";
    case Errc::BenchmarkNotFound: return "BenchmarkNotFound";
    case Errc::BenchmarkInactive: return "BenchmarkInactive";
    case Errc::ExecutionNotFound: return "ExecutionNotFound";
    case Errc::InvalidState: return "InvalidState";
    case Errc::AlreadyTerminal: return "AlreadyTerminal";
    case Errc::NoCapacity: return "NoCapacity";
    case Errc::UnknownMetric: return "UnknownMetric";
    case Errc::ScaleMismatch: return "ScaleMismatch";
    case Errc::ExecutionNotAcceptingResults: return "ExecutionNotAcceptingResults";
    case Errc::BadHeader: return "BadHeader";
    case Errc::RowError: return "RowError";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::ZeroMean: return "ZeroMean";
    case Errc::ScaleUnsupported: return "ScaleUnsupported";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::Conflict: return "Conflict";
    case Errc::BadConfig: return "BadConfig";
    case Errc::BadRequest: return "BadRequest";
    case Errc::StoreUnavailable: return "StoreUnavailable";
    case Errc::PortInUse: return "PortInUse";
    case Errc::Transport: return "Transport";
  }
  return "Unknown";
}

std::optional<Errc> parse_errc(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Errc::Transport); ++i)
    if (errc_name(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
  return std::nullopt;
}

}  // namespace cwb
