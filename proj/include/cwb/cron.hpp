#pragma once

#include <bitset>
#include <string>
#include <string_view>

#include "cwb/clock.hpp"

namespace cwb::sched {

/// One parsed cron field. `bits[v]` is set when value v matches. `star` records
/// whether the field text started with '*', which decides the classic
/// day-of-month / day-of-week OR rule.
struct CronField {
  std::bitset<60> bits;
  bool star = false;

  bool matches(unsigned v) const { return v < bits.size() && bits.test(v); }
  bool operator==(const CronField&) const = default;
};

/// Classic 5-field cron expression evaluated in UTC.
/// Fields: minute 0-59, hour 0-23, day-of-month 1-31, month 1-12,
/// day-of-week 0-6 (0 = Sunday). Each field accepts `*`, `N`, `A-B`,
/// `*/S`, `A-B/S`, `N/S` and comma-separated lists of those.
class CronExpression {
 public:
  /// Throws Error(SyntaxError | FieldOutOfRange | UnsatisfiableExpression).
  /// Error details carry the 0-based character position.
  static CronExpression parse(std::string_view text);

  bool matches(Instant minute) const;

  /// Smallest whole-minute instant strictly after `after` that matches.
  Instant next_fire(Instant after) const;

  const std::string& text() const { return text_; }
  const CronField& minute() const { return minute_; }
  const CronField& hour() const { return hour_; }
  const CronField& day_of_month() const { return dom_; }
  const CronField& month() const { return month_; }
  const CronField& day_of_week() const { return dow_; }

  bool operator==(const CronExpression& o) const { return text_ == o.text_; }

 private:
  bool day_matches(std::chrono::sys_days day) const;

  std::string text_;
  CronField minute_, hour_, dom_, month_, dow_;
};

}  // namespace cwb::sched
