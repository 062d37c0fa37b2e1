#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <string>

namespace cwb {

using Instant = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;
using Minutes = std::chrono::minutes;

/// Time source shared by the scheduler, orchestrator and simulated driver.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Instant now() const = 0;
  // Blocks (real clock) or jumps forward (simulated clock) until `t`.
  virtual void sleep_until(Instant t) = 0;
};

class SystemClock final : public Clock {
 public:
  Instant now() const override;
  void sleep_until(Instant t) override;
};

/// Manually driven clock. Starts at `start` and only moves when told to.
class SimulatedClock final : public Clock {
 public:
  explicit SimulatedClock(Instant start);

  Instant now() const override;
  void sleep_until(Instant t) override;

  void advance(Seconds by);
  void set(Instant t);

 private:
  std::atomic<std::int64_t> seconds_;
};

/// Wall clock replayed from `start` at `rate` times real speed; a live server
/// in simulated mode uses it so deadlines elapse quickly.
class ScaledClock final : public Clock {
 public:
  ScaledClock(Instant start, double rate);

  Instant now() const override;
  void sleep_until(Instant t) override;
  double rate() const { return rate_; }

 private:
  Instant start_;
  std::chrono::steady_clock::time_point origin_;
  double rate_;
};

std::string format_instant(Instant t);  // 2024-01-01T10:17:00Z
Instant parse_instant(const std::string& text);
Instant make_instant(int year, unsigned month, unsigned day, unsigned hour = 0,
                     unsigned minute = 0, unsigned second = 0);

}  // namespace cwb
