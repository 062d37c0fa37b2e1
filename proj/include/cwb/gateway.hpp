#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "cwb/clock.hpp"
#include "cwb/driver.hpp"
#include "cwb/gateway_config.hpp"
#include "cwb/orchestrator.hpp"
#include "cwb/recipe.hpp"
#include "cwb/scheduler.hpp"
#include "cwb/store.hpp"

namespace httplib {
class Server;
}

namespace cwb::gateway {

/// Fixed set of worker threads draining a FIFO of jobs.
class ThreadPool {
 public:
  explicit ThreadPool(std::size_t workers);
  ~ThreadPool();
  void submit(std::function<void()> job);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

/// HTTP status for an error code.
int http_status(Errc code);
nlohmann::json error_body(const Error& e);

/// The server process: store, drivers, recipes, orchestrator, scheduler and
/// the REST API.
class Service {
 public:
  /// Opens the store (StoreUnavailable) and loads recipes. `clock` defaults to
  /// the system clock.
  explicit Service(Config config, const Clock* clock = nullptr);
  ~Service();

  /// Binds (PortInUse), recovers unfinished executions and starts serving.
  void start();
  /// Stops accepting requests, finishes in-flight provider work and stops the
  /// supervision loop. Idempotent.
  void stop();

  int port() const { return port_; }
  std::string base_url() const;
  const Config& config() const { return config_; }

  store::Store& store() { return *store_; }
  providers::DriverRegistry& drivers() { return drivers_; }
  provisioning::RecipeRegistry& recipes() { return recipes_; }
  orchestration::Orchestrator& orchestrator() { return *orch_; }

  /// Validates and stores a definition document; returns its API form.
  nlohmann::json create_benchmark(const nlohmann::json& doc);
  nlohmann::json clone_benchmark(const std::string& id, const nlohmann::json& overrides);
  nlohmann::json variability(const std::string& benchmark_id, const std::string& metric) const;

 private:
  void routes();
  void supervise();
  void tick();
  void wake();
  model::BenchmarkDefinition load_benchmark(const std::string& id) const;

  Config config_;
  std::unique_ptr<Clock> owned_clock_;
  const Clock* clock_;
  std::unique_ptr<store::Store> store_;
  providers::DriverRegistry drivers_;
  provisioning::RecipeRegistry recipes_;
  std::unique_ptr<ThreadPool> pool_;
  std::unique_ptr<orchestration::Orchestrator> orch_;
  sched::Scheduler scheduler_;
  IdGenerator benchmark_ids_;
  std::unique_ptr<httplib::Server> http_;
  std::thread http_thread_;
  std::thread loop_thread_;
  std::mutex loop_mu_;
  std::condition_variable loop_cv_;
  bool work_signal_ = false;
  std::atomic<bool> running_{false};
  bool stopped_ = false;
  int port_ = 0;
};

}  // namespace cwb::gateway
