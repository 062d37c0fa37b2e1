#include "cwb/state_machine.hpp"

#include <algorithm>

#include "cwb/error.hpp"

namespace cwb::fsm {

using S = ExecutionState;
using E = ExecutionEvent;

std::string_view to_string(ExecutionState s) {
  switch (s) {
    case S::WaitingForStartPreparing: return "WAITING_FOR_START_PREPARING";
    case S::Preparing: return "PREPARING";
    case S::FailedOnPreparing: return "FAILED_ON_PREPARING";
    case S::WaitingForStartRunning: return "WAITING_FOR_START_RUNNING";
    case S::Running: return "RUNNING";
    case S::FailedOnRunning: return "FAILED_ON_RUNNING";
    case S::WaitingForStartPostprocessing: return "WAITING_FOR_START_POSTPROCESSING";
    case S::Postprocessing: return "POSTPROCESSING";
    case S::FailedOnPostprocessing: return "FAILED_ON_POSTPROCESSING";
    case S::ReleasingResources: return "RELEASING_RESOURCES";
    case S::FailedOnReleasing: return "FAILED_ON_RELEASING";
    case S::Finished: return "FINISHED";
  }
  return "UNKNOWN";
}

std::string_view to_string(ExecutionEvent e) {
  switch (e) {
    case E::Created: return "CREATED";
    case E::StartedPreparing: return "STARTED_PREPARING";
    case E::FailedOnPreparing: return "FAILED_ON_PREPARING";
    case E::FinishedPreparing: return "FINISHED_PREPARING";
    case E::StartedRunning: return "STARTED_RUNNING";
    case E::FailedOnRunning: return "FAILED_ON_RUNNING";
    case E::FinishedRunning: return "FINISHED_RUNNING";
    case E::StartedPostprocessing: return "STARTED_POSTPROCESSING";
    case E::FailedOnPostprocessing: return "FAILED_ON_POSTPROCESSING";
    case E::FinishedPostprocessing: return "FINISHED_POSTPROCESSING";
    case E::StartedReleasing: return "STARTED_RELEASING";
    case E::FailedOnReleasing: return "FAILED_ON_RELEASING";
    case E::FinishedReleasingResources: return "FINISHED_RELEASING_RESOURCES";
    case E::RunTimeoutElapsed: return "RUN_TIMEOUT_ELAPSED";
    case E::ReleaseGraceElapsed: return "RELEASE_GRACE_ELAPSED";
    case E::DevModeEntered: return "DEV_MODE_ENTERED";
    case E::DevModeExited: return "DEV_MODE_EXITED";
  }
  return "UNKNOWN";
}

std::optional<ExecutionState> parse_state(std::string_view name) {
  for (auto s : kAllStates)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

std::optional<ExecutionEvent> parse_event(std::string_view name) {
  for (auto e : kAllEvents)
    if (to_string(e) == name) return e;
  return std::nullopt;
}

std::string display_name(ExecutionState s) {
  std::string out(to_string(s));
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

bool is_terminal(ExecutionState s) {
  return s == S::Finished || s == S::FailedOnReleasing;
}

bool is_failure_state(ExecutionState s) {
  return s == S::FailedOnPreparing || s == S::FailedOnRunning ||
         s == S::FailedOnPostprocessing || s == S::FailedOnReleasing;
}

std::optional<ExecutionState> try_apply(ExecutionState state, ExecutionEvent event,
                                        bool dev_mode) {
  // Dev mode toggles are accepted anywhere the execution is still steerable.
  if (event == E::DevModeEntered || event == E::DevModeExited) {
    if (is_terminal(state) || state == S::ReleasingResources) return std::nullopt;
    if ((event == E::DevModeEntered) == dev_mode) return std::nullopt;
    return state;
  }

  switch (state) {
    case S::WaitingForStartPreparing:
      if (event == E::StartedPreparing) return S::Preparing;
      break;
    case S::Preparing:
      if (event == E::FailedOnPreparing) return S::FailedOnPreparing;
      if (event == E::FinishedPreparing) return S::WaitingForStartRunning;
      break;
    case S::WaitingForStartRunning:
      if (event == E::StartedRunning) return S::Running;
      if (event == E::FailedOnRunning) return S::FailedOnRunning;
      break;
    case S::Running:
      if (event == E::FinishedRunning) return S::WaitingForStartPostprocessing;
      if (event == E::FailedOnRunning || event == E::RunTimeoutElapsed)
        return S::FailedOnRunning;
      break;
    case S::WaitingForStartPostprocessing:
      if (event == E::StartedPostprocessing) return S::Postprocessing;
      if (event == E::FailedOnPostprocessing) return S::FailedOnPostprocessing;
      break;
    case S::Postprocessing:
      if (event == E::FinishedPostprocessing) return S::ReleasingResources;
      if (event == E::FailedOnPostprocessing) return S::FailedOnPostprocessing;
      break;
    case S::FailedOnPreparing:
    case S::FailedOnRunning:
    case S::FailedOnPostprocessing:
      if (event == E::ReleaseGraceElapsed)
        return dev_mode ? state : S::ReleasingResources;
      if (event == E::StartedReleasing) return S::ReleasingResources;
      if (event == E::StartedPreparing && dev_mode) return S::Preparing;
      break;
    case S::ReleasingResources:
      if (event == E::FinishedReleasingResources) return S::Finished;
      if (event == E::FailedOnReleasing) return S::FailedOnReleasing;
      break;
    case S::FailedOnReleasing:
    case S::Finished:
      break;
  }
  return std::nullopt;
}

ExecutionState apply_event(ExecutionState state, ExecutionEvent event, bool dev_mode) {
  if (auto next = try_apply(state, event, dev_mode)) return *next;
  throw Error(Errc::IllegalTransition,
              std::string(to_string(state)) + " + " + std::string(to_string(event)));
}

bool dev_mode_after(ExecutionEvent event, bool dev_mode) {
  if (event == E::DevModeEntered) return true;
  if (event == E::DevModeExited) return false;
  return dev_mode;
}

std::set<ExecutionEvent> allowed_events(ExecutionState s, bool dev_mode) {
  std::set<ExecutionEvent> out;
  for (auto e : kAllEvents)
    if (try_apply(s, e, dev_mode)) out.insert(e);
  return out;
}

std::optional<ExecutionState> failure_state_of(ExecutionEvent e) {
  switch (e) {
    case E::FailedOnPreparing: return S::FailedOnPreparing;
    case E::FailedOnRunning:
    case E::RunTimeoutElapsed: return S::FailedOnRunning;
    case E::FailedOnPostprocessing: return S::FailedOnPostprocessing;
    case E::FailedOnReleasing: return S::FailedOnReleasing;
    default: return std::nullopt;
  }
}

namespace {

template <typename Range, typename Get>
Replay replay_impl(const Range& log, Get event_of) {
  if (log.empty()) throw Error(Errc::EmptyLog, "event log is empty");
  if (event_of(log.front()) != E::Created)
    throw Error(Errc::IllegalTransition, "event log must begin with CREATED");
  Replay r{initial_state(), false, std::nullopt};
  for (std::size_t i = 1; i < log.size(); ++i) {
    auto e = event_of(log[i]);
    r.state = apply_event(r.state, e, r.dev_mode);
    r.dev_mode = dev_mode_after(e, r.dev_mode);
    if (!r.first_failure) r.first_failure = failure_state_of(e);
  }
  return r;
}

std::string status_of(const Replay& r) {
  return display_name(r.first_failure.value_or(r.state));
}

}  // namespace

Replay replay(std::span<const ExecutionEvent> log) {
  return replay_impl(log, [](ExecutionEvent e) { return e; });
}

Replay replay(std::span<const LoggedEvent> log) {
  return replay_impl(log, [](const LoggedEvent& l) { return l.event; });
}

std::string displayed_status(std::span<const ExecutionEvent> log) {
  return status_of(replay(log));
}

std::string displayed_status(std::span<const LoggedEvent> log) {
  return status_of(replay(log));
}

}  // namespace cwb::fsm
