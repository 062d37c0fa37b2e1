#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cwb/clock.hpp"
#include "cwb/cron.hpp"

namespace cwb::sched {

struct ScheduledBenchmark {
  std::string id;
  std::optional<CronExpression> schedule;
  bool active = true;
};

/// Decides which benchmarks are due. A benchmark fires when the next matching
/// minute after its last trigger is <= now. After downtime spanning several
/// matching minutes it fires once, not once per missed minute.
class Scheduler {
 public:
  std::vector<std::string> tick(Instant now, const std::vector<ScheduledBenchmark>& benchmarks);

  void set_last_fired(const std::string& id, Instant at);
  std::optional<Instant> last_fired(const std::string& id) const;
  void forget(const std::string& id);

 private:
  mutable std::mutex mu_;
  std::map<std::string, Instant> anchor_;
};

}  // namespace cwb::sched
