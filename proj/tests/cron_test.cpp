#include <gtest/gtest.h>

#include <random>

#include "cron_oracle.hpp"
#include "cwb/cron.hpp"
#include "cwb/error.hpp"
#include "cwb/scheduler.hpp"

namespace {

using cwb::Errc;
using cwb::Instant;
using cwb::make_instant;
using cwb::sched::CronExpression;
using cwb::sched::Scheduler;

Errc parse_error(const std::string& text) {
  try {
    CronExpression::parse(text);
  } catch (const cwb::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error for " << text;
  return Errc::Transport;
}

TEST(CronParse, EveryFiveMinutes) {
  auto c = CronExpression::parse("*/5 * * * *");
  for (unsigned m = 0; m < 60; ++m) EXPECT_EQ(c.minute().matches(m), m % 5 == 0) << m;
  EXPECT_TRUE(c.minute().star);
  for (unsigned h = 0; h < 24; ++h) EXPECT_TRUE(c.hour().matches(h));
}

TEST(CronParse, HourOutOfRange) { EXPECT_EQ(parse_error("0 61 * * *"), Errc::FieldOutOfRange); }

TEST(CronParse, SyntaxErrorsCarryPosition) {
  EXPECT_EQ(parse_error("* * * *"), Errc::SyntaxError);
  EXPECT_EQ(parse_error("* * * * * *"), Errc::SyntaxError);
  EXPECT_EQ(parse_error("*/0 * * * *"), Errc::SyntaxError);
  EXPECT_EQ(parse_error("5-2 * * * *"), Errc::SyntaxError);
  EXPECT_EQ(parse_error("1,,2 * * * *"), Errc::SyntaxError);
  EXPECT_EQ(parse_error("a * * * *"), Errc::SyntaxError);
  EXPECT_EQ(parse_error("* * * * 7"), Errc::FieldOutOfRange);
  EXPECT_EQ(parse_error("* * 0 * *"), Errc::FieldOutOfRange);
  try {
    CronExpression::parse("0 0 * x *");
  } catch (const cwb::Error& e) {
    EXPECT_NE(std::string(e.what()).find("position 6"), std::string::npos) << e.what();
  }
}

TEST(CronParse, Unsatisfiable) {
  EXPECT_EQ(parse_error("0 0 30 2 *"), Errc::UnsatisfiableExpression);
  EXPECT_EQ(parse_error("0 0 31 4,6,9,11 *"), Errc::UnsatisfiableExpression);
  EXPECT_NO_THROW(CronExpression::parse("0 0 29 2 *"));
  // Day-of-week widens the match, so this one fires on Mondays.
  EXPECT_NO_THROW(CronExpression::parse("0 0 30 2 1"));
}

TEST(CronParse, WeeklyExpansionMatchesMinuteEnumeration) {
  auto c = CronExpression::parse("15 2 * * 1");
  // 2024-01-01 is a Monday.
  auto start = make_instant(2024, 1, 1);
  std::vector<Instant> hits;
  for (int m = 0; m < 7 * 24 * 60; ++m) {
    Instant t = start + std::chrono::minutes{m};
    if (c.matches(t)) hits.push_back(t);
  }
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0], make_instant(2024, 1, 1, 2, 15));
  EXPECT_TRUE(c.minute().matches(15));
  EXPECT_EQ(c.minute().bits.count(), 1u);
  EXPECT_EQ(c.hour().bits.count(), 1u);
  EXPECT_EQ(c.day_of_week().bits.count(), 1u);
  EXPECT_TRUE(c.day_of_week().matches(1));
}

TEST(CronNextFire, DailyMidnight) {
  auto c = CronExpression::parse("0 0 * * *");
  EXPECT_EQ(c.next_fire(make_instant(2024, 1, 1, 10, 17)), make_instant(2024, 1, 2));
}

TEST(CronNextFire, FiveMinuteStep) {
  auto c = CronExpression::parse("*/5 * * * *");
  EXPECT_EQ(c.next_fire(make_instant(2024, 1, 1, 12, 3)), make_instant(2024, 1, 1, 12, 5));
  // Strictly after, even on a matching minute.
  EXPECT_EQ(c.next_fire(make_instant(2024, 1, 1, 12, 5)), make_instant(2024, 1, 1, 12, 10));
  EXPECT_EQ(c.next_fire(make_instant(2024, 1, 1, 12, 5, 30)), make_instant(2024, 1, 1, 12, 10));
}

TEST(CronNextFire, SkipsMonthsWithoutThe31st) {
  auto c = CronExpression::parse("0 12 31 * *");
  EXPECT_EQ(c.next_fire(make_instant(2024, 2, 1)), make_instant(2024, 3, 31, 12, 0));
}

TEST(CronNextFire, LeapDay) {
  auto c = CronExpression::parse("0 0 29 2 *");
  EXPECT_EQ(c.next_fire(make_instant(2024, 3, 1)), make_instant(2028, 2, 29));
}

TEST(CronNextFire, DomDowOrRule) {
  // 13th of the month OR any Friday.
  auto c = CronExpression::parse("0 0 13 * 5");
  // 2024-09-01 is a Sunday; first Friday is the 6th.
  EXPECT_EQ(c.next_fire(make_instant(2024, 9, 1)), make_instant(2024, 9, 6));
  EXPECT_EQ(c.next_fire(make_instant(2024, 9, 10)), make_instant(2024, 9, 13));
}

TEST(CronProperty, MatchesBruteForceOnRandomExpressions) {
  std::mt19937 rng(20240101);
  int checked = 0;
  for (int i = 0; i < 60; ++i) {
    auto oc = cwb::testing::random_cron(rng);
    std::optional<CronExpression> c;
    try {
      c = CronExpression::parse(oc.text);
    } catch (const cwb::Error& e) {
      ASSERT_EQ(e.code(), Errc::UnsatisfiableExpression) << oc.text;
      continue;
    }
    auto after = make_instant(2023, 1, 1) + std::chrono::minutes{std::uniform_int_distribution<int>(0, 3 * 525600)(rng)};
    auto expected = cwb::testing::brute_force_next(oc, after);
    if (!expected) continue;
    EXPECT_EQ(c->next_fire(after), *expected) << oc.text;
    ++checked;
  }
  EXPECT_GT(checked, 30);
}

TEST(CronProperty, NextFireStrictlyIncreasingAndMonotone) {
  auto c = CronExpression::parse("7,37 */3 * * 1-5");
  Instant t = make_instant(2024, 5, 1);
  Instant prev_next = c.next_fire(t);
  for (int i = 0; i < 500; ++i) {
    auto n = c.next_fire(t);
    EXPECT_GT(n, t);
    EXPECT_GE(n, prev_next);
    prev_next = n;
    t += std::chrono::minutes{17};
  }
}

std::vector<cwb::sched::ScheduledBenchmark> one(const std::string& expr) {
  return {{"b1", CronExpression::parse(expr), true}};
}

TEST(Scheduler, FiresWhenDue) {
  Scheduler s;
  s.set_last_fired("b1", make_instant(2024, 1, 1, 12, 0));
  EXPECT_EQ(s.tick(make_instant(2024, 1, 1, 12, 5), one("*/5 * * * *")),
            std::vector<std::string>{"b1"});
}

TEST(Scheduler, UnscheduledNeverFires) {
  Scheduler s;
  std::vector<cwb::sched::ScheduledBenchmark> bs{{"manual", std::nullopt, true}};
  for (int m = 0; m < 120; ++m)
    EXPECT_TRUE(s.tick(make_instant(2024, 1, 1) + std::chrono::minutes{m}, bs).empty());
}

TEST(Scheduler, AtMostOncePerMinute) {
  Scheduler s;
  auto bs = one("*/5 * * * *");
  s.set_last_fired("b1", make_instant(2024, 1, 1, 12, 0));
  EXPECT_EQ(s.tick(make_instant(2024, 1, 1, 12, 5, 1), bs).size(), 1u);
  EXPECT_TRUE(s.tick(make_instant(2024, 1, 1, 12, 5, 40), bs).empty());
}

TEST(Scheduler, InactiveNeverFires) {
  Scheduler s;
  std::vector<cwb::sched::ScheduledBenchmark> bs{{"b1", CronExpression::parse("* * * * *"), false}};
  EXPECT_TRUE(s.tick(make_instant(2024, 1, 1, 12, 5), bs).empty());
}

TEST(Scheduler, ClockSkipFiresOnce) {
  Scheduler s;
  auto bs = one("*/5 * * * *");
  s.set_last_fired("b1", make_instant(2024, 1, 1, 12, 0));
  // Down for an hour and a half: one catch-up firing, then back on schedule.
  EXPECT_EQ(s.tick(make_instant(2024, 1, 1, 13, 32), bs).size(), 1u);
  EXPECT_TRUE(s.tick(make_instant(2024, 1, 1, 13, 33), bs).empty());
  EXPECT_EQ(s.tick(make_instant(2024, 1, 1, 13, 35), bs).size(), 1u);
}

TEST(Scheduler, TwelveFiresPerSimulatedHour) {
  Scheduler s;
  auto bs = one("*/5 * * * *");
  int fires = 0;
  auto start = make_instant(2024, 1, 1, 12, 0);
  for (int sec = 0; sec < 3600; ++sec) fires += static_cast<int>(s.tick(start + cwb::Seconds{sec}, bs).size());
  EXPECT_EQ(fires, 12);
}

}  // namespace
