#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwb/driver.hpp"

namespace cwb::providers {

/// Oscillating bandwidth trace with occasional sudden drops. Samples are
/// scaled so their expectation equals `mean_kbps`.
struct SyntheticBandwidth {
  double mean_kbps = 3500.0;
  double amplitude = 0.2;       // relative sine amplitude
  double period_samples = 40;   // samples per oscillation
  double noise = 0.05;          // relative gaussian noise
  double drop_prob = 0.02;      // per-sample probability of a drop
  double drop_factor = 0.3;     // bandwidth multiplier during a drop

  std::vector<double> generate(std::mt19937_64& rng, std::size_t samples) const;
};

struct FaultPlan {
  std::uint64_t seed = 1;
  double acquire_failure_prob = 0.0;
  double provision_failure_prob = 0.0;
  double run_failure_prob = 0.0;
  double release_failure_prob = 0.0;
  // Uniform acquire latency; equal bounds give a fixed latency.
  Seconds acquire_latency_min{2};
  Seconds acquire_latency_max{5};
  Seconds readiness_timeout{300};
  Seconds command_timeout{600};
  Seconds run_duration{60};
  Seconds postprocess_duration{2};
  std::size_t max_vms = 0;  // 0 = unlimited
  std::string cpu_model = "Simulated Xeon E5-2670 v2 @ 2.50GHz";
  std::string bandwidth_metric = "seq_write_bandwidth_kbps";
  std::string cpu_metric = "cpu_model";
  SyntheticBandwidth bandwidth;

  /// Throws BadConfig when a probability is outside [0, 1].
  void validate() const;
};

void to_json(nlohmann::json& j, const FaultPlan& p);
void from_json(const nlohmann::json& j, FaultPlan& p);

/// Deterministic in-memory cloud. Every fault decision for a VM is drawn at
/// acquire time from an RNG derived from (seed, acquire sequence number), so
/// identical plans yield identical behaviour regardless of interleaving.
///
/// Blocking commands understood by the emulator: `true`, `false`,
/// `exit N`, `sleep N`, `test -e|-f|-d PATH`, `touch PATH`, `mkdir -p PATH`;
/// anything else succeeds. Fire-and-forget `cwb-agent run` and
/// `cwb-agent postprocess` start a virtual agent that reads /cwb/config and
/// reports through poll_messages().
class SimulatedDriver final : public Driver {
 public:
  SimulatedDriver(FaultPlan plan, const Clock& clock);

  std::string id() const override { return "simulated"; }
  std::vector<ResourceHandle> acquire(const model::VmSpec& spec,
                                      const std::string& owner) override;
  std::optional<ResourceHandle> poll_ready(const std::string& handle_id) override;
  std::optional<Instant> ready_at(const std::string& handle_id) const override;
  ExecResult exec(const std::string& handle_id, const std::string& command,
                  ExecMode mode) override;
  SyncReport sync(const std::string& handle_id, const std::vector<Payload>& files) override;
  void release(const std::string& handle_id) override;
  std::optional<ResourceHandle> find(const std::string& handle_id) const override;
  std::vector<ResourceHandle> outstanding() const override;
  void adopt(const ResourceHandle& handle) override;
  std::vector<AgentMessage> poll_messages(Instant now) override;
  std::optional<Instant> next_message_at() const override;

  const FaultPlan& plan() const { return plan_; }
  std::vector<std::string> command_history(const std::string& handle_id) const;
  std::optional<std::string> read_file(const std::string& handle_id, const std::string& path) const;

  static constexpr std::size_t kMaxPayloadBytes = 16u << 20;

 private:
  struct File {
    std::string content;
    bool executable = false;
  };
  struct Slot {
    ResourceHandle handle;
    Instant requested_at;
    Instant ready_at;
    bool fail_provision = false;
    bool fail_run = false;
    bool fail_release = false;
    std::uint64_t rng_seed = 0;
    std::map<std::string, File> files;
    std::vector<std::string> history;
  };

  Slot& slot(const std::string& handle_id);
  const Slot& slot(const std::string& handle_id) const;
  Slot& ready_vm(const std::string& handle_id);
  ExecResult emulate(Slot& s, const std::string& command);
  void start_agent(Slot& s, const std::string& command);
  void push(AgentMessage m);

  FaultPlan plan_;
  const Clock& clock_;
  mutable std::mutex mu_;
  std::uint64_t acquisitions_ = 0;
  std::uint64_t handle_seq_ = 0;
  std::uint64_t message_seq_ = 0;
  std::map<std::string, Slot> slots_;
  std::vector<AgentMessage> pending_;
};

}  // namespace cwb::providers
