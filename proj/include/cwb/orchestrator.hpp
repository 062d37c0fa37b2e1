#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwb/clock.hpp"
#include "cwb/definition.hpp"
#include "cwb/driver.hpp"
#include "cwb/error.hpp"
#include "cwb/ids.hpp"
#include "cwb/provisioner.hpp"
#include "cwb/recipe.hpp"
#include "cwb/results.hpp"
#include "cwb/state_machine.hpp"
#include "cwb/store.hpp"

namespace cwb::orchestration {

enum class Cause { Manual, Scheduled };

std::string_view to_string(Cause c);

/// Bounded concurrency for starting preparation and postprocessing. Waiting
/// executions queue FIFO.
class SlotPool {
 public:
  explicit SlotPool(std::size_t capacity) : capacity_(capacity) {}

  bool try_take() {
    if (used_ >= capacity_) return false;
    ++used_;
    return true;
  }
  void give_back() {
    if (used_ > 0) --used_;
  }
  std::size_t used() const { return used_; }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t used_ = 0;
};

struct OrchestratorOptions {
  std::size_t max_preparing = 4;
  std::size_t max_postprocessing = 4;
  /// Endpoint written into each agent configuration.
  std::string server_url = "http://127.0.0.1:8080";
  /// Runs blocking driver work. Empty runs it inline on the calling thread,
  /// which keeps simulated runs deterministic.
  std::function<void(std::function<void()>)> executor;
  /// Called whenever new work becomes runnable (lets a serve loop wake early).
  std::function<void()> on_work;
};

struct NotifyAck {
  std::string displayed_status;
  fsm::ExecutionState state;
  bool duplicate = false;
};

/// Drives executions through the lifecycle. All transitions happen under one
/// lock, so each execution's log has a single writer; blocking provider work
/// runs outside the lock with the execution marked busy.
class Orchestrator {
 public:
  Orchestrator(OrchestratorOptions options, store::Store& store, providers::DriverRegistry& drivers,
               provisioning::RecipeRegistry& recipes, const Clock& clock);
  ~Orchestrator();

  /// Throws BenchmarkNotFound or BenchmarkInactive.
  std::string trigger(const std::string& benchmark_id, Cause cause = Cause::Manual);

  /// One supervision pass at clock.now(): hosted-agent messages, deadlines,
  /// readiness, slot queues.
  void advance();
  /// Earliest instant at which advance() has something to do.
  std::optional<Instant> next_wakeup() const;

  // Agent-facing. Throw ExecutionNotFound, Conflict, BadRequest.
  NotifyAck notify(const std::string& execution_id, fsm::ExecutionEvent event);
  store::BatchResult record(const std::string& execution_id, const std::string& metric,
                            const nlohmann::json& value, std::optional<std::int64_t> offset_ms,
                            const std::optional<std::string>& submission_id = std::nullopt);
  store::BatchResult ingest_csv(const std::string& execution_id, std::string_view csv,
                                const std::optional<std::string>& batch_id);
  bool token_matches(const std::string& execution_id, const std::string& token) const;

  // Experimenter-facing.
  void enter_dev_mode(const std::string& execution_id);
  void exit_dev_mode(const std::string& execution_id);
  void release_now(const std::string& execution_id);
  provisioning::ProvisionReport reprovision(const std::string& execution_id);

  /// Executions, events and allowed actions as served by the API; state is
  /// recomputed from the persisted event log.
  nlohmann::json view(const std::string& execution_id) const;

  /// Re-attaches executions left non-terminal by a previous process.
  void recover();

  std::size_t active_count() const;
  /// True when no execution is active and no work is in flight.
  bool idle() const;
  /// Blocks until in-flight provider work has finished.
  void drain();

  std::size_t preparing_in_use() const;
  std::size_t max_preparing_observed() const;

 private:
  enum class Phase {
    Queued,
    Acquiring,
    AwaitingReady,
    Provisioning,
    Running,
    PostQueued,
    Postprocessing,
    Held,
    Releasing,
  };

  struct Runtime {
    std::string id;
    model::BenchmarkDefinition def;
    std::string token;
    Instant created_at;
    fsm::ExecutionState state = fsm::initial_state();
    bool dev_mode = false;
    std::optional<fsm::ExecutionState> first_failure;
    std::vector<fsm::ExecutionEvent> seen;
    Phase phase = Phase::Queued;
    Instant deadline;
    std::optional<Instant> grace_deadline;
    std::vector<ResourceHandle> handles;
    int busy = 0;  // provider tasks in flight
    bool release_pending = false;
    bool holds_prep = false;
    bool holds_post = false;
  };

  using Task = std::function<void()>;
  using Lock = std::unique_lock<std::mutex>;

  Runtime& active(const std::string& id, Errc if_terminal);
  Runtime* find_active(const std::string& id);
  const Runtime* find_active(const std::string& id) const;

  void emit(Runtime& rt, fsm::ExecutionEvent ev);
  void log(const Runtime& rt, const std::string& text);
  void fail(Runtime& rt, fsm::ExecutionEvent ev, const std::string& why);
  void on_entered(Runtime& rt, fsm::ExecutionEvent ev);
  void begin_release(Runtime& rt);
  void finish(Runtime& rt);
  void reap();
  NotifyAck notify_locked(Runtime& rt, fsm::ExecutionEvent event);
  store::BatchResult ingest_locked(Runtime& rt, std::string_view csv,
                                   const std::optional<std::string>& batch_id);
  Runtime& accepting(const std::string& execution_id);
  void free_slots(Runtime& rt);
  void schedule(Task t);
  void dispatch();
  void run_tasks();

  void handle_message(const providers::AgentMessage& m);
  void enforce_timeouts(Instant now);
  void poll_readiness();
  void start_queued();

  void start_preparing(Runtime& rt);
  void acquire_task(std::string id);
  void provision_task(std::string id);
  provisioning::ProvisionReport provision_all(const std::string& id, const std::vector<ResourceHandle>& vms,
                                              const model::BenchmarkDefinition& def,
                                              const std::string& token);
  void start_running(Runtime& rt);
  void start_postprocessing(Runtime& rt);
  void exec_task(std::string id, std::string handle_id, std::string command,
                 fsm::ExecutionEvent on_failure);
  void release_task(std::string id);
  void task_done(Runtime& rt);

  std::vector<ResourceHandle> vm_handles(const Runtime& rt) const;
  nlohmann::json actions(const store::ExecutionRecord& rec, const fsm::Replay& r) const;

  OrchestratorOptions options_;
  store::Store& store_;
  providers::DriverRegistry& drivers_;
  provisioning::RecipeRegistry& recipes_;
  const Clock& clock_;
  IdGenerator ids_;

  mutable std::mutex mu_;
  std::condition_variable idle_cv_;
  std::map<std::string, std::unique_ptr<Runtime>> active_;
  std::deque<std::string> prep_queue_;
  std::deque<std::string> post_queue_;
  SlotPool prep_slots_;
  SlotPool post_slots_;
  std::size_t max_prep_seen_ = 0;
  std::vector<Task> pending_;
  std::vector<std::string> finished_;
  std::size_t in_flight_ = 0;
};

}  // namespace cwb::orchestration
