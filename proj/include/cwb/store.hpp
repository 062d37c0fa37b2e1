#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwb/clock.hpp"
#include "cwb/definition.hpp"
#include "cwb/resource.hpp"
#include "cwb/results.hpp"
#include "cwb/state_machine.hpp"

struct sqlite3;

namespace cwb::store {

struct ExecutionRecord {
  std::string id;
  std::string benchmark_id;
  std::string cause = "manual";  // manual | scheduled
  std::string token;
  Instant created_at;
  fsm::ExecutionState state = fsm::initial_state();
  bool dev_mode = false;
  std::string displayed_status;  // display form, e.g. "FAILED ON PREPARING"
  Instant updated_at;
};

struct ExecutionFilter {
  std::optional<std::string> state;  // wire name; matches current or displayed state
  std::optional<std::string> benchmark_id;
  std::optional<Instant> created_from;  // inclusive
  std::optional<Instant> created_to;    // exclusive
};

struct LogLine {
  std::int64_t cursor = 0;
  Instant at;
  std::string text;
};

struct BatchResult {
  std::size_t count = 0;
  bool duplicate = false;
};

/// Relational store over SQLite. `path` may be ":memory:". All methods are
/// safe to call concurrently; multi-row writes are transactional.
class Store {
 public:
  explicit Store(const std::string& path);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  void put_benchmark(const model::BenchmarkDefinition& def);
  std::optional<nlohmann::json> benchmark(const std::string& id) const;
  std::vector<nlohmann::json> benchmarks() const;

  /// Inserts the execution and its `created` event atomically.
  void create_execution(const ExecutionRecord& rec, Instant created_at);
  /// Appends to the event log and updates the cached state in one transaction.
  void append_event(const std::string& execution_id, const fsm::LoggedEvent& ev,
                    fsm::ExecutionState state, bool dev_mode, const std::string& displayed);
  std::optional<ExecutionRecord> execution(const std::string& id) const;
  std::vector<ExecutionRecord> executions(const ExecutionFilter& filter = {}) const;
  std::vector<fsm::LoggedEvent> events(const std::string& execution_id) const;

  void save_resource(const std::string& execution_id, const ResourceHandle& handle);
  std::vector<ResourceHandle> resources(const std::string& execution_id) const;

  /// All-or-nothing insert. A batch id already seen for the execution is
  /// reported as a duplicate and stores nothing.
  BatchResult add_observations(const std::string& execution_id,
                               std::span<const results::Observation> obs,
                               const std::optional<std::string>& batch_id = std::nullopt);
  /// Ordered by metric, then offset, then insertion.
  std::vector<results::Observation> observations(const std::string& execution_id,
                                                 const std::optional<std::string>& metric = {}) const;
  std::size_t observation_count(const std::string& execution_id) const;

  std::int64_t append_log(const std::string& execution_id, Instant at, const std::string& text);
  std::vector<LogLine> log_after(const std::string& execution_id, std::int64_t cursor,
                                 std::size_t limit = 1000) const;

  void put_recipe(const nlohmann::json& recipe);
  std::vector<nlohmann::json> recipes() const;

 private:
  void exec_sql(const char* sql) const;

  mutable std::recursive_mutex mu_;
  sqlite3* db_ = nullptr;
};

}  // namespace cwb::store
