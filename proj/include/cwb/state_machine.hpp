#pragma once

#include <array>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwb/clock.hpp"

namespace cwb::fsm {

enum class ExecutionState {
  WaitingForStartPreparing,
  Preparing,
  FailedOnPreparing,
  WaitingForStartRunning,
  Running,
  FailedOnRunning,
  WaitingForStartPostprocessing,
  Postprocessing,
  FailedOnPostprocessing,
  ReleasingResources,
  FailedOnReleasing,
  Finished,
};

enum class ExecutionEvent {
  Created,
  StartedPreparing,
  FailedOnPreparing,
  FinishedPreparing,
  StartedRunning,
  FailedOnRunning,
  FinishedRunning,
  StartedPostprocessing,
  FailedOnPostprocessing,
  FinishedPostprocessing,
  StartedReleasing,
  FailedOnReleasing,
  FinishedReleasingResources,
  RunTimeoutElapsed,
  ReleaseGraceElapsed,
  DevModeEntered,
  DevModeExited,
};

inline constexpr std::array kAllStates = {
    ExecutionState::WaitingForStartPreparing,
    ExecutionState::Preparing,
    ExecutionState::FailedOnPreparing,
    ExecutionState::WaitingForStartRunning,
    ExecutionState::Running,
    ExecutionState::FailedOnRunning,
    ExecutionState::WaitingForStartPostprocessing,
    ExecutionState::Postprocessing,
    ExecutionState::FailedOnPostprocessing,
    ExecutionState::ReleasingResources,
    ExecutionState::FailedOnReleasing,
    ExecutionState::Finished,
};

inline constexpr std::array kAllEvents = {
    ExecutionEvent::Created,
    ExecutionEvent::StartedPreparing,
    ExecutionEvent::FailedOnPreparing,
    ExecutionEvent::FinishedPreparing,
    ExecutionEvent::StartedRunning,
    ExecutionEvent::FailedOnRunning,
    ExecutionEvent::FinishedRunning,
    ExecutionEvent::StartedPostprocessing,
    ExecutionEvent::FailedOnPostprocessing,
    ExecutionEvent::FinishedPostprocessing,
    ExecutionEvent::StartedReleasing,
    ExecutionEvent::FailedOnReleasing,
    ExecutionEvent::FinishedReleasingResources,
    ExecutionEvent::RunTimeoutElapsed,
    ExecutionEvent::ReleaseGraceElapsed,
    ExecutionEvent::DevModeEntered,
    ExecutionEvent::DevModeExited,
};

// Upper-snake wire names, e.g. "FAILED_ON_RUNNING" / "STARTED_PREPARING".
std::string_view to_string(ExecutionState s);
std::string_view to_string(ExecutionEvent e);
std::optional<ExecutionState> parse_state(std::string_view name);
std::optional<ExecutionEvent> parse_event(std::string_view name);

// Human form used for status display: "FAILED ON PREPARING".
std::string display_name(ExecutionState s);

/// State entered by the `created` event.
constexpr ExecutionState initial_state() {
  return ExecutionState::WaitingForStartPreparing;
}

/// Returns the successor state or nullopt when (state, event) is not a legal
/// transition.
std::optional<ExecutionState> try_apply(ExecutionState state, ExecutionEvent event,
                                        bool dev_mode);

/// Like try_apply, but throws Error(IllegalTransition) for illegal pairs.
ExecutionState apply_event(ExecutionState state, ExecutionEvent event, bool dev_mode);

/// Dev flag after the event has been applied.
bool dev_mode_after(ExecutionEvent event, bool dev_mode);

bool is_terminal(ExecutionState s);
bool is_failure_state(ExecutionState s);  // any FAILED_ON_*
std::set<ExecutionEvent> allowed_events(ExecutionState s, bool dev_mode);

// Failure state a failure-type event leads into, if the event is one.
std::optional<ExecutionState> failure_state_of(ExecutionEvent e);

struct LoggedEvent {
  Instant at;
  ExecutionEvent event;

  bool operator==(const LoggedEvent&) const = default;
};

struct Replay {
  ExecutionState state;
  bool dev_mode;
  std::optional<ExecutionState> first_failure;
};

/// Replays a log that starts with `created`. Throws EmptyLog / IllegalTransition.
Replay replay(std::span<const ExecutionEvent> log);
Replay replay(std::span<const LoggedEvent> log);

/// First failure state if any failure occurred, else the current state, in
/// display form.
std::string displayed_status(std::span<const ExecutionEvent> log);
std::string displayed_status(std::span<const LoggedEvent> log);

}  // namespace cwb::fsm
