#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "cwb/error.hpp"
#include "cwb/provisioner.hpp"
#include "cwb/state_machine.hpp"

namespace cwb::agent {

using provisioning::AgentConfig;

/// Parses the JSON written to /cwb/config. Throws BadConfig.
AgentConfig parse_config(const nlohmann::json& doc);
AgentConfig load_config(const std::filesystem::path& path);

struct Request {
  std::string method;
  std::string path;  // including query string
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

struct Response {
  int status = 0;
  std::string body;
};

/// One HTTP exchange. Throws Error(Transport) when the server cannot be
/// reached; any HTTP status is returned as a Response.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Response send(const Request& req) = 0;
};

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(10));
  Response send(const Request& req) override;

 private:
  std::string base_url_;
  std::chrono::seconds timeout_;
};

struct RetryPolicy {
  int attempts = 5;
  std::chrono::milliseconds initial{1000};
  double factor = 2.0;
  double jitter = 0.2;  // +/- fraction of the nominal delay
};

/// Delay before retry number `retry` (1 = after the first failed attempt).
std::chrono::milliseconds backoff(const RetryPolicy& p, int retry, std::mt19937_64& rng);

using Sleeper = std::function<void(std::chrono::milliseconds)>;
using LogSink = std::function<void(const std::string&)>;

struct Ack {
  std::string displayed_status;
  std::string state;
  bool duplicate = false;
};

struct BatchAck {
  std::size_t count = 0;
  bool duplicate = false;
};

/// Reports to the server on behalf of one execution. Server-side rejections
/// (4xx) surface as the server's error code and are never retried; network
/// failures and 5xx are retried, then spooled.
class Client {
 public:
  Client(AgentConfig config, Transport& transport, std::filesystem::path spool_dir,
         RetryPolicy policy = {}, Sleeper sleeper = {}, LogSink log = {},
         std::uint64_t seed = std::random_device{}());

  Ack notify(fsm::ExecutionEvent event);
  BatchAck submit(const std::string& metric, const nlohmann::json& value,
                  std::optional<std::int64_t> offset_ms = std::nullopt);
  BatchAck submit_csv(const std::string& csv, const std::string& batch_id);

  /// Re-sends spooled requests oldest first; a delivered or rejected request
  /// leaves the spool. Returns how many were delivered.
  std::size_t flush_spool();

  const AgentConfig& config() const { return config_; }

 private:
  Response deliver(Request req);
  Response attempt_all(const Request& req);
  void spool(const Request& req);
  Request base(std::string method, std::string path) const;

  AgentConfig config_;
  Transport& transport_;
  std::filesystem::path spool_dir_;
  RetryPolicy policy_;
  Sleeper sleeper_;
  LogSink log_;
  std::mt19937_64 rng_;
  int spooled_ = 0;
};

/// Maps a non-2xx response to the server's error code, falling back to the
/// HTTP status.
Error rejection(const Response& r);

/// Runs /cwb/runner under `root` and reports finished_running or
/// failed_on_running. Returns the process exit code for cwb-agent.
int run_callback(Client& client, const std::filesystem::path& root, const LogSink& log);

/// Runs /cwb/postprocess (if present), submits /cwb/results.csv and reports
/// finished_postprocessing or failed_on_postprocessing.
int postprocess(Client& client, const std::filesystem::path& root, const LogSink& log);

}  // namespace cwb::agent
