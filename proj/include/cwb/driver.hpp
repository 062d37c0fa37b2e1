#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cwb/clock.hpp"
#include "cwb/definition.hpp"
#include "cwb/resource.hpp"
#include "cwb/state_machine.hpp"

namespace cwb::providers {

enum class ExecMode { Blocking, FireAndForget };

struct ExecResult {
  int exit_code = 0;
  std::string stdout_text;
  std::string stderr_text;
};

/// A file placed at a resource-relative path such as "/cwb/runner".
struct Payload {
  std::string path;
  std::string content;
  bool executable = false;
};

struct SyncReport {
  std::vector<std::string> written;
  std::vector<std::string> unchanged;

  bool noop() const { return written.empty(); }
};

/// Notification produced by an agent hosted inside a driver (the simulated
/// driver's virtual agents). Real agents talk to the gateway instead.
struct AgentMessage {
  enum class Kind { StateEvent, MetricsCsv };

  Instant at;
  std::uint64_t seq = 0;
  std::string execution_id;
  Kind kind = Kind::StateEvent;
  fsm::ExecutionEvent event = fsm::ExecutionEvent::FinishedRunning;
  std::string csv;
  std::string batch_id;
};

/// Uniform contract over resource acquisition, remote commands, file sync and
/// release. Operations on distinct handles may run concurrently; callers
/// serialize operations on one handle.
class Driver {
 public:
  virtual ~Driver() = default;

  virtual std::string id() const = 0;

  /// Returns handles in `requested` status without waiting for readiness.
  /// Throws QuotaExceeded, ProviderUnavailable or AcquireFailed.
  virtual std::vector<ResourceHandle> acquire(const model::VmSpec& spec,
                                              const std::string& owner) = 0;

  /// Non-blocking readiness check. Returns the ready handle, or nullopt while
  /// still starting. Throws ReadinessTimeout or ResourceReleased.
  virtual std::optional<ResourceHandle> poll_ready(const std::string& handle_id) = 0;

  /// Earliest instant a pending handle could become ready, if known.
  virtual std::optional<Instant> ready_at(const std::string& handle_id) const = 0;

  /// Waits on `clock` until the handle is ready.
  ResourceHandle await_ready(const std::string& handle_id, Clock& clock);

  /// Blocking mode returns exit status and output (NonZeroExit is left to the
  /// caller). Fire-and-forget returns once the command has been spawned.
  /// Throws ConnectionLost when the command exceeds the driver timeout.
  virtual ExecResult exec(const std::string& handle_id, const std::string& command,
                          ExecMode mode) = 0;

  /// Idempotent: identical payloads are reported as unchanged.
  virtual SyncReport sync(const std::string& handle_id, const std::vector<Payload>& files) = 0;

  /// Legal in any status; releasing a requested handle cancels it. Releasing a
  /// released handle is a no-op. Throws ReleaseFailed, leaving the handle live.
  virtual void release(const std::string& handle_id) = 0;

  virtual std::optional<ResourceHandle> find(const std::string& handle_id) const = 0;

  /// Every handle not yet released.
  virtual std::vector<ResourceHandle> outstanding() const = 0;

  /// Re-attaches a handle persisted before a restart so it can be released.
  virtual void adopt(const ResourceHandle& handle) = 0;

  virtual std::vector<AgentMessage> poll_messages(Instant /*now*/) { return {}; }
  /// When the next hosted-agent message becomes deliverable, if any is pending.
  virtual std::optional<Instant> next_message_at() const { return std::nullopt; }

  /// Marks an owning execution as terminated; its unreleased handles are
  /// reported by leaked_resources() from then on.
  void close_owner(const std::string& owner);
  std::vector<ResourceHandle> leaked_resources() const;

 private:
  mutable std::mutex owners_mu_;
  std::set<std::string> closed_owners_;
};

class DriverRegistry {
 public:
  void add(std::shared_ptr<Driver> driver);
  /// Throws ProviderUnavailable for unknown ids.
  Driver& get(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::set<std::string> ids() const;
  std::vector<ResourceHandle> leaked_resources() const;

 private:
  std::map<std::string, std::shared_ptr<Driver>> drivers_;
};

}  // namespace cwb::providers
