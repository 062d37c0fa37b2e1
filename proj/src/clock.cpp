#include "cwb/clock.hpp"

#include <cstdio>
#include <stdexcept>
#include <thread>

namespace cwb {

using namespace std::chrono;

Instant SystemClock::now() const { return floor<seconds>(system_clock::now()); }

void SystemClock::sleep_until(Instant t) { std::this_thread::sleep_until(t); }

SimulatedClock::SimulatedClock(Instant start)
    : seconds_(start.time_since_epoch().count()) {}

Instant SimulatedClock::now() const { return Instant{Seconds{seconds_.load()}}; }

void SimulatedClock::sleep_until(Instant t) {
  auto target = t.time_since_epoch().count();
  auto current = seconds_.load();
  while (current < target && !seconds_.compare_exchange_weak(current, target)) {
  }
}

void SimulatedClock::advance(Seconds by) { seconds_ += by.count(); }

void SimulatedClock::set(Instant t) { seconds_ = t.time_since_epoch().count(); }

ScaledClock::ScaledClock(Instant start, double rate)
    : start_(start), origin_(steady_clock::now()), rate_(rate) {
  if (!(rate > 0)) throw std::invalid_argument("clock rate must be positive");
}

Instant ScaledClock::now() const {
  duration<double> real = steady_clock::now() - origin_;
  return start_ + Seconds{static_cast<std::int64_t>(real.count() * rate_)};
}

void ScaledClock::sleep_until(Instant t) {
  auto ahead = duration<double>(t - now()) / rate_;
  if (ahead.count() > 0) std::this_thread::sleep_for(ahead);
}

std::string format_instant(Instant t) {
  auto day = floor<days>(t);
  year_month_day ymd{day};
  hh_mm_ss hms{t - day};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()),
                static_cast<long>(hms.minutes().count()),
                static_cast<long long>(hms.seconds().count()));
  return buf;
}

Instant parse_instant(const std::string& text) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int n = std::sscanf(text.c_str(), "%d-%u-%uT%u:%u:%u", &y, &mo, &d, &h, &mi, &s);
  if (n < 3) throw std::invalid_argument("bad instant: " + text);
  year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60)
    throw std::invalid_argument("bad instant: " + text);
  return make_instant(y, mo, d, h, mi, s);
}

Instant make_instant(int y, unsigned mo, unsigned d, unsigned h, unsigned mi,
                     unsigned s) {
  sys_days day = year{y} / month{mo} / std::chrono::day{d};
  return Instant{day} + hours{h} + minutes{mi} + seconds{s};
}

}  // namespace cwb
