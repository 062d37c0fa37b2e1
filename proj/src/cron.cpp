#include "cwb/cron.hpp"

#include <cctype>
#include <charconv>
#include <vector>

#include "cwb/error.hpp"

namespace cwb::sched {

using namespace std::chrono;

namespace {

struct FieldSpec {
  const char* name;
  unsigned lo;
  unsigned hi;
};

constexpr FieldSpec kFields[5] = {
    {"minute", 0, 59}, {"hour", 0, 23}, {"day-of-month", 1, 31},
    {"month", 1, 12}, {"day-of-week", 0, 6},
};

[[noreturn]] void syntax_error(std::size_t pos, const std::string& what) {
  throw Error(Errc::SyntaxError, "position " + std::to_string(pos) + ": " + what);
}

class FieldParser {
 public:
  FieldParser(std::string_view text, std::size_t offset, const FieldSpec& spec)
      : text_(text), offset_(offset), spec_(spec) {}

  CronField parse() {
    CronField f;
    f.star = !text_.empty() && text_.front() == '*';
    std::size_t start = 0;
    while (true) {
      auto comma = text_.find(',', start);
      auto end = comma == std::string_view::npos ? text_.size() : comma;
      if (end == start) syntax_error(offset_ + start, "empty list element");
      parse_element(start, end, f);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return f;
  }

 private:
  unsigned number(std::size_t& pos, std::size_t end) {
    std::size_t begin = pos;
    while (pos < end && std::isdigit(static_cast<unsigned char>(text_[pos]))) ++pos;
    if (begin == pos) syntax_error(offset_ + begin, "expected a number");
    unsigned v = 0;
    auto [p, ec] = std::from_chars(text_.data() + begin, text_.data() + pos, v);
    if (ec != std::errc{}) syntax_error(offset_ + begin, "number too large");
    return v;
  }

  void check_range(unsigned v, std::size_t pos) const {
    if (v < spec_.lo || v > spec_.hi)
      throw Error(Errc::FieldOutOfRange,
                  std::string(spec_.name) + " value " + std::to_string(v) +
                      " outside " + std::to_string(spec_.lo) + "-" +
                      std::to_string(spec_.hi) + " at position " +
                      std::to_string(offset_ + pos));
  }

  void parse_element(std::size_t pos, std::size_t end, CronField& f) {
    unsigned lo = spec_.lo, hi = spec_.hi;
    bool single = false;
    if (text_[pos] == '*') {
      ++pos;
    } else {
      auto at = pos;
      lo = number(pos, end);
      check_range(lo, at);
      hi = lo;
      single = true;
      if (pos < end && text_[pos] == '-') {
        ++pos;
        at = pos;
        hi = number(pos, end);
        check_range(hi, at);
        if (hi < lo) syntax_error(offset_ + at, "range end before start");
        single = false;
      }
    }
    unsigned step = 1;
    if (pos < end && text_[pos] == '/') {
      ++pos;
      auto at = pos;
      step = number(pos, end);
      if (step == 0) syntax_error(offset_ + at, "step must be positive");
      // "N/S" means N through the field maximum in steps of S.
      if (single) hi = spec_.hi;
    }
    if (pos != end) syntax_error(offset_ + pos, "unexpected character");
    for (unsigned v = lo; v <= hi; v += step) f.bits.set(v);
  }

  std::string_view text_;
  std::size_t offset_;
  const FieldSpec& spec_;
};

unsigned days_in_month_max(unsigned month) {
  static constexpr unsigned kDays[13] = {0, 31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return kDays[month];
}

}  // namespace

CronExpression CronExpression::parse(std::string_view text) {
  CronExpression out;
  out.text_ = std::string(text);
  CronField* fields[5] = {&out.minute_, &out.hour_, &out.dom_, &out.month_, &out.dow_};

  std::size_t pos = 0;
  int index = 0;
  while (true) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    if (pos == text.size()) break;
    auto start = pos;
    while (pos < text.size() && text[pos] != ' ' && text[pos] != '\t') ++pos;
    if (index == 5) syntax_error(start, "more than 5 fields");
    *fields[index] = FieldParser(text.substr(start, pos - start), start, kFields[index]).parse();
    ++index;
  }
  if (index != 5)
    syntax_error(text.size(), "expected 5 fields, got " + std::to_string(index));

  // Satisfiable unless the day-of-month list never fits in any selected month,
  // which only matters when day-of-week does not widen the match.
  bool dom_or_dow = !out.dom_.star && !out.dow_.star;
  if (!dom_or_dow && out.dow_.star) {
    bool any = false;
    for (unsigned m = 1; m <= 12 && !any; ++m) {
      if (!out.month_.matches(m)) continue;
      for (unsigned d = 1; d <= days_in_month_max(m); ++d)
        if (out.dom_.matches(d)) {
          any = true;
          break;
        }
    }
    if (!any)
      throw Error(Errc::UnsatisfiableExpression,
                  "no day-of-month exists in the selected months: " + out.text_);
  }
  return out;
}

bool CronExpression::day_matches(sys_days day) const {
  year_month_day ymd{day};
  if (!month_.matches(static_cast<unsigned>(ymd.month()))) return false;
  bool dom = dom_.matches(static_cast<unsigned>(ymd.day()));
  bool dow = dow_.matches(weekday{day}.c_encoding());
  if (!dom_.star && !dow_.star) return dom || dow;
  return dom && dow;
}

bool CronExpression::matches(Instant t) const {
  auto day = floor<days>(t);
  hh_mm_ss hms{t - day};
  return day_matches(day) &&
         hour_.matches(static_cast<unsigned>(hms.hours().count())) &&
         minute_.matches(static_cast<unsigned>(hms.minutes().count()));
}

Instant CronExpression::next_fire(Instant after) const {
  auto start = floor<minutes>(after) + minutes{1};
  auto day = floor<days>(start);
  auto first_minute_of_day = duration_cast<minutes>(start - day).count();

  // Feb 29 schedules can skip up to eight years around century years.
  for (int i = 0; i < 366 * 9; ++i, first_minute_of_day = 0) {
    auto d = day + days{i};
    if (!day_matches(d)) continue;
    for (auto m = first_minute_of_day; m < 24 * 60; ++m) {
      if (hour_.matches(static_cast<unsigned>(m / 60)) &&
          minute_.matches(static_cast<unsigned>(m % 60)))
        return Instant{d} + minutes{m};
    }
  }
  throw Error(Errc::UnsatisfiableExpression, "no matching instant: " + text_);
}

}  // namespace cwb::sched
