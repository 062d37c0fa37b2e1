#include "cwb/scheduler.hpp"

namespace cwb::sched {

std::vector<std::string> Scheduler::tick(Instant now,
                                         const std::vector<ScheduledBenchmark>& benchmarks) {
  std::lock_guard lock(mu_);
  std::vector<std::string> due;
  for (const auto& b : benchmarks) {
    if (!b.active || !b.schedule) continue;
    auto [it, inserted] = anchor_.try_emplace(b.id, Instant{});
    if (inserted) {
      // First sighting: the current minute is still eligible.
      it->second = std::chrono::floor<std::chrono::minutes>(now) - Seconds{1};
    }
    if (b.schedule->next_fire(it->second) <= now) {
      due.push_back(b.id);
      it->second = now;
    }
  }
  return due;
}

void Scheduler::set_last_fired(const std::string& id, Instant at) {
  std::lock_guard lock(mu_);
  anchor_[id] = at;
}

std::optional<Instant> Scheduler::last_fired(const std::string& id) const {
  std::lock_guard lock(mu_);
  if (auto it = anchor_.find(id); it != anchor_.end()) return it->second;
  return std::nullopt;
}

void Scheduler::forget(const std::string& id) {
  std::lock_guard lock(mu_);
  anchor_.erase(id);
}

}  // namespace cwb::sched
