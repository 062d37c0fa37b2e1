#include "cwb/simulated_driver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "cwb/error.hpp"

namespace cwb::providers {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

bool draw(std::mt19937_64& rng, double p) {
  // Always consume one value so the draw sequence does not depend on p.
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return u < p;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string strip_quotes(std::string s) {
  s.erase(std::remove(s.begin(), s.end(), '"'), s.end());
  s.erase(std::remove(s.begin(), s.end(), '\''), s.end());
  // Resource paths are relative to the resource root.
  for (const char* root : {"$CWB_ROOT", "${CWB_ROOT}"})
    if (s.rfind(root, 0) == 0) s = s.substr(std::string(root).size());
  return s;
}

}  // namespace

std::vector<double> SyntheticBandwidth::generate(std::mt19937_64& rng, std::size_t samples) const {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // Drops pull the mean down by drop_prob * (1 - drop_factor); compensate.
  double base = mean_kbps / (1.0 - drop_prob * (1.0 - drop_factor));
  double phase = uni(rng) * 2.0 * std::numbers::pi;
  std::vector<double> out;
  out.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    double v = base * (1.0 + amplitude * std::sin(phase + 2.0 * std::numbers::pi *
                                                              static_cast<double>(i) / period_samples));
    v *= 1.0 + noise * gauss(rng);
    if (uni(rng) < drop_prob) v *= drop_factor;
    out.push_back(std::max(v, mean_kbps * 0.01));
  }
  return out;
}

void FaultPlan::validate() const {
  auto check = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0))
      throw Error(Errc::BadConfig, std::string(name) + " must be within [0, 1]");
  };
  check(acquire_failure_prob, "acquire_failure_prob");
  check(provision_failure_prob, "provision_failure_prob");
  check(run_failure_prob, "run_failure_prob");
  check(release_failure_prob, "release_failure_prob");
  check(bandwidth.drop_prob, "synthetic_bandwidth.drop_prob");
  if (acquire_latency_max < acquire_latency_min)
    throw Error(Errc::BadConfig, "acquire_latency max below min");
  if (bandwidth.mean_kbps <= 0) throw Error(Errc::BadConfig, "synthetic_bandwidth.mean_kbps must be > 0");
}

void to_json(nlohmann::json& j, const FaultPlan& p) {
  j = {{"seed", p.seed},
       {"acquire_failure_prob", p.acquire_failure_prob},
       {"provision_failure_prob", p.provision_failure_prob},
       {"run_failure_prob", p.run_failure_prob},
       {"release_failure_prob", p.release_failure_prob},
       {"acquire_latency_seconds", {{"min", p.acquire_latency_min.count()}, {"max", p.acquire_latency_max.count()}}},
       {"readiness_timeout_seconds", p.readiness_timeout.count()},
       {"command_timeout_seconds", p.command_timeout.count()},
       {"run_duration_seconds", p.run_duration.count()},
       {"postprocess_duration_seconds", p.postprocess_duration.count()},
       {"max_vms", p.max_vms},
       {"cpu_model", p.cpu_model},
       {"synthetic_bandwidth",
        {{"mean_kbps", p.bandwidth.mean_kbps},
         {"amplitude", p.bandwidth.amplitude},
         {"period_samples", p.bandwidth.period_samples},
         {"noise", p.bandwidth.noise},
         {"drop_prob", p.bandwidth.drop_prob},
         {"drop_factor", p.bandwidth.drop_factor}}}};
}

void from_json(const nlohmann::json& j, FaultPlan& p) {
  p.seed = j.value("seed", p.seed);
  p.acquire_failure_prob = j.value("acquire_failure_prob", p.acquire_failure_prob);
  p.provision_failure_prob = j.value("provision_failure_prob", p.provision_failure_prob);
  p.run_failure_prob = j.value("run_failure_prob", p.run_failure_prob);
  p.release_failure_prob = j.value("release_failure_prob", p.release_failure_prob);
  if (auto it = j.find("acquire_latency_seconds"); it != j.end()) {
    if (it->is_number()) {
      p.acquire_latency_min = p.acquire_latency_max = Seconds{it->get<long>()};
    } else {
      p.acquire_latency_min = Seconds{it->value("min", p.acquire_latency_min.count())};
      p.acquire_latency_max = Seconds{it->value("max", p.acquire_latency_max.count())};
    }
  }
  p.readiness_timeout = Seconds{j.value("readiness_timeout_seconds", p.readiness_timeout.count())};
  p.command_timeout = Seconds{j.value("command_timeout_seconds", p.command_timeout.count())};
  p.run_duration = Seconds{j.value("run_duration_seconds", p.run_duration.count())};
  p.postprocess_duration =
      Seconds{j.value("postprocess_duration_seconds", p.postprocess_duration.count())};
  p.max_vms = j.value("max_vms", p.max_vms);
  p.cpu_model = j.value("cpu_model", p.cpu_model);
  if (auto it = j.find("synthetic_bandwidth"); it != j.end()) {
    auto& b = p.bandwidth;
    b.mean_kbps = it->value("mean_kbps", b.mean_kbps);
    b.amplitude = it->value("amplitude", b.amplitude);
    b.period_samples = it->value("period_samples", b.period_samples);
    b.noise = it->value("noise", b.noise);
    b.drop_prob = it->value("drop_prob", b.drop_prob);
    b.drop_factor = it->value("drop_factor", b.drop_factor);
  }
}

SimulatedDriver::SimulatedDriver(FaultPlan plan, const Clock& clock)
    : plan_(std::move(plan)), clock_(clock) {
  plan_.validate();
}

std::vector<ResourceHandle> SimulatedDriver::acquire(const model::VmSpec& spec,
                                                     const std::string& owner) {
  std::lock_guard lock(mu_);
  if (plan_.max_vms > 0) {
    std::size_t live = 0;
    for (const auto& [id, s] : slots_)
      live += s.handle.kind == ResourceKind::Vm && s.handle.status != ResourceStatus::Released;
    if (live >= plan_.max_vms) throw Error(Errc::QuotaExceeded, "simulated quota of " + std::to_string(plan_.max_vms) + " VMs reached");
  }

  auto seq = ++acquisitions_;
  std::mt19937_64 rng(splitmix64(plan_.seed ^ splitmix64(seq)));
  bool acquire_fails = draw(rng, plan_.acquire_failure_prob);
  bool provision_fails = draw(rng, plan_.provision_failure_prob);
  bool run_fails = draw(rng, plan_.run_failure_prob);
  bool release_fails = draw(rng, plan_.release_failure_prob);
  auto latency = Seconds{std::uniform_int_distribution<long>(plan_.acquire_latency_min.count(),
                                                             plan_.acquire_latency_max.count())(rng)};
  auto agent_seed = rng();
  if (acquire_fails)
    throw Error(Errc::AcquireFailed, "injected acquire fault for role " + spec.role);

  auto now = clock_.now();
  auto make = [&](ResourceKind kind, const std::string& detail) {
    char id[32];
    std::snprintf(id, sizeof id, "sim-%06llu", static_cast<unsigned long long>(++handle_seq_));
    Slot s;
    s.handle = ResourceHandle{id, "simulated", spec.role, kind, ResourceStatus::Requested,
                              "sim://" + spec.region + "/" + detail + "/" + id, owner};
    s.requested_at = now;
    s.ready_at = now + latency;
    s.fail_release = release_fails;
    return s;
  };

  std::vector<ResourceHandle> out;
  auto vm = make(ResourceKind::Vm, spec.instance_type.empty() ? "vm" : spec.instance_type);
  vm.fail_provision = provision_fails;
  vm.fail_run = run_fails;
  vm.rng_seed = agent_seed;
  out.push_back(vm.handle);
  slots_.emplace(vm.handle.id, std::move(vm));
  for (const auto& [key, value] : spec.extra_resources.items()) {
    auto kind = key.find("ip") != std::string::npos || key.find("address") != std::string::npos
                    ? ResourceKind::Address
                    : ResourceKind::BlockStorage;
    auto extra = make(kind, key);
    out.push_back(extra.handle);
    slots_.emplace(extra.handle.id, std::move(extra));
  }
  return out;
}

SimulatedDriver::Slot& SimulatedDriver::slot(const std::string& handle_id) {
  auto it = slots_.find(handle_id);
  if (it == slots_.end()) throw Error(Errc::ResourceReleased, "unknown handle " + handle_id);
  return it->second;
}

const SimulatedDriver::Slot& SimulatedDriver::slot(const std::string& handle_id) const {
  auto it = slots_.find(handle_id);
  if (it == slots_.end()) throw Error(Errc::ResourceReleased, "unknown handle " + handle_id);
  return it->second;
}

SimulatedDriver::Slot& SimulatedDriver::ready_vm(const std::string& handle_id) {
  auto& s = slot(handle_id);
  if (s.handle.status == ResourceStatus::Released)
    throw Error(Errc::ResourceReleased, handle_id + " has been released");
  if (s.handle.status != ResourceStatus::Ready)
    throw Error(Errc::ConnectionLost, handle_id + " is not ready");
  if (s.handle.kind != ResourceKind::Vm)
    throw Error(Errc::BadRequest, handle_id + " is not a VM");
  return s;
}

std::optional<ResourceHandle> SimulatedDriver::poll_ready(const std::string& handle_id) {
  std::lock_guard lock(mu_);
  auto& s = slot(handle_id);
  if (s.handle.status == ResourceStatus::Released)
    throw Error(Errc::ResourceReleased, handle_id + " has been released");
  auto now = clock_.now();
  if (s.handle.status == ResourceStatus::Requested) {
    if (s.ready_at - s.requested_at > plan_.readiness_timeout &&
        now >= s.requested_at + plan_.readiness_timeout)
      throw Error(Errc::ReadinessTimeout, handle_id + " not ready after " +
                                              std::to_string(plan_.readiness_timeout.count()) + "s");
    if (now < s.ready_at) return std::nullopt;
    s.handle.status = ResourceStatus::Ready;
  }
  return s.handle;
}

std::optional<Instant> SimulatedDriver::ready_at(const std::string& handle_id) const {
  std::lock_guard lock(mu_);
  const auto& s = slot(handle_id);
  // A handle that will miss the readiness timeout changes at the timeout.
  return std::min(s.ready_at, s.requested_at + plan_.readiness_timeout);
}

ExecResult SimulatedDriver::emulate(Slot& s, const std::string& command) {
  auto words = split_words(command);
  if (s.fail_provision)
    return {1, "", "injected provisioning fault"};
  if (words.empty() || words[0] == "true") return {0, "", ""};
  if (words[0] == "false") return {1, "", ""};
  if (words[0] == "exit" && words.size() > 1) return {std::atoi(words[1].c_str()), "", ""};
  if (words[0] == "sleep" && words.size() > 1) {
    if (Seconds{std::atol(words[1].c_str())} > plan_.command_timeout)
      throw Error(Errc::ConnectionLost, "command exceeded " +
                                            std::to_string(plan_.command_timeout.count()) + "s: " + command);
    return {0, "", ""};
  }
  if (words[0] == "test" && words.size() > 2) {
    auto path = strip_quotes(words[2]);
    bool found = s.files.contains(path);
    if (words[1] == "-d" || words[1] == "-e") {
      auto prefix = path + "/";
      for (const auto& [p, f] : s.files) found = found || p.rfind(prefix, 0) == 0;
    }
    return {found ? 0 : 1, "", ""};
  }
  if (words[0] == "touch" && words.size() > 1) {
    s.files.try_emplace(strip_quotes(words[1]));
    return {0, "", ""};
  }
  if (words[0] == "mkdir" && words.size() > 1) {
    s.files.try_emplace(strip_quotes(words.back()) + "/.keep");
    return {0, "", ""};
  }
  return {0, "", ""};
}

void SimulatedDriver::push(AgentMessage m) {
  m.seq = ++message_seq_;
  pending_.push_back(std::move(m));
}

void SimulatedDriver::start_agent(Slot& s, const std::string& command) {
  auto cfg = s.files.find("/cwb/config");
  if (cfg == s.files.end()) throw Error(Errc::ConnectionLost, "agent configuration missing on " + s.handle.id);
  auto config = nlohmann::json::parse(cfg->second.content, nullptr, false);
  if (config.is_discarded()) throw Error(Errc::ConnectionLost, "agent configuration unreadable on " + s.handle.id);
  auto execution = config.value("execution_id", "");
  auto now = clock_.now();

  if (command.find("cwb-agent run") != std::string::npos) {
    AgentMessage m;
    m.execution_id = execution;
    if (s.fail_run) {
      m.at = now + plan_.run_duration / 2;
      m.event = fsm::ExecutionEvent::FailedOnRunning;
    } else {
      m.at = now + plan_.run_duration;
      m.event = fsm::ExecutionEvent::FinishedRunning;
    }
    push(std::move(m));
  } else if (command.find("cwb-agent postprocess") != std::string::npos) {
    std::mt19937_64 rng(s.rng_seed);
    auto samples = static_cast<std::size_t>(std::max<long>(2, plan_.run_duration.count() * 2));
    auto trace = plan_.bandwidth.generate(rng, samples);
    std::string csv = "metric,value,offset_ms\n";
    csv += plan_.cpu_metric + ",\"" + plan_.cpu_model + "\",\n";
    char row[96];
    for (std::size_t i = 0; i < trace.size(); ++i) {
      std::snprintf(row, sizeof row, "%.3f,%llu\n", trace[i], static_cast<unsigned long long>(i * 500));
      csv += plan_.bandwidth_metric + "," + row;
    }
    AgentMessage metrics;
    metrics.at = now + plan_.postprocess_duration;
    metrics.execution_id = execution;
    metrics.kind = AgentMessage::Kind::MetricsCsv;
    metrics.csv = std::move(csv);
    metrics.batch_id = s.handle.id + "-results";
    push(std::move(metrics));
    AgentMessage done;
    done.at = now + plan_.postprocess_duration;
    done.execution_id = execution;
    done.event = fsm::ExecutionEvent::FinishedPostprocessing;
    push(std::move(done));
  }
}

ExecResult SimulatedDriver::exec(const std::string& handle_id, const std::string& command,
                                 ExecMode mode) {
  std::lock_guard lock(mu_);
  auto& s = ready_vm(handle_id);
  s.history.push_back(command);
  if (mode == ExecMode::Blocking) return emulate(s, command);
  start_agent(s, command);
  return {0, "spawned", ""};
}

SyncReport SimulatedDriver::sync(const std::string& handle_id, const std::vector<Payload>& files) {
  std::lock_guard lock(mu_);
  auto& s = ready_vm(handle_id);
  SyncReport report;
  for (const auto& p : files) {
    if (p.content.size() > kMaxPayloadBytes)
      throw Error(Errc::PayloadTooLarge, p.path + " exceeds " + std::to_string(kMaxPayloadBytes) + " bytes");
    auto it = s.files.find(p.path);
    if (it != s.files.end() && it->second.content == p.content &&
        it->second.executable == p.executable) {
      report.unchanged.push_back(p.path);
      continue;
    }
    s.files[p.path] = File{p.content, p.executable};
    report.written.push_back(p.path);
  }
  return report;
}

void SimulatedDriver::release(const std::string& handle_id) {
  std::lock_guard lock(mu_);
  auto& s = slot(handle_id);
  if (s.handle.status == ResourceStatus::Released) return;
  if (s.fail_release) throw Error(Errc::ReleaseFailed, "injected release fault for " + handle_id);
  s.handle.status = ResourceStatus::Released;
  s.files.clear();
}

std::optional<ResourceHandle> SimulatedDriver::find(const std::string& handle_id) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(handle_id);
  if (it == slots_.end()) return std::nullopt;
  return it->second.handle;
}

std::vector<ResourceHandle> SimulatedDriver::outstanding() const {
  std::lock_guard lock(mu_);
  std::vector<ResourceHandle> out;
  for (const auto& [id, s] : slots_)
    if (s.handle.status != ResourceStatus::Released) out.push_back(s.handle);
  return out;
}

void SimulatedDriver::adopt(const ResourceHandle& handle) {
  std::lock_guard lock(mu_);
  if (slots_.contains(handle.id)) return;
  Slot s;
  s.handle = handle;
  s.requested_at = s.ready_at = clock_.now();
  slots_.emplace(handle.id, std::move(s));
}

std::vector<AgentMessage> SimulatedDriver::poll_messages(Instant now) {
  std::lock_guard lock(mu_);
  std::vector<AgentMessage> due;
  std::vector<AgentMessage> later;
  for (auto& m : pending_) (m.at <= now ? due : later).push_back(std::move(m));
  pending_ = std::move(later);
  std::sort(due.begin(), due.end(), [](const AgentMessage& a, const AgentMessage& b) {
    return a.at != b.at ? a.at < b.at : a.seq < b.seq;
  });
  return due;
}

std::optional<Instant> SimulatedDriver::next_message_at() const {
  std::lock_guard lock(mu_);
  std::optional<Instant> next;
  for (const auto& m : pending_)
    if (!next || m.at < *next) next = m.at;
  return next;
}

std::vector<std::string> SimulatedDriver::command_history(const std::string& handle_id) const {
  std::lock_guard lock(mu_);
  return slot(handle_id).history;
}

std::optional<std::string> SimulatedDriver::read_file(const std::string& handle_id,
                                                      const std::string& path) const {
  std::lock_guard lock(mu_);
  const auto& s = slot(handle_id);
  auto it = s.files.find(path);
  if (it == s.files.end()) return std::nullopt;
  return it->second.content;
}

}  // namespace cwb::providers
