#include "reclab/time.hpp"

#include <charconv>
#include <cstdio>

#include "reclab/errors.hpp"

namespace reclab {

using namespace std::chrono;

std::string to_iso8601(Timestamp ts) {
  const auto day = floor<days>(ts);
  const year_month_day ymd{day};
  const hh_mm_ss<milliseconds> tod{ts - day};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()), int(tod.hours().count()),
                int(tod.minutes().count()), int(tod.seconds().count()),
                int(tod.subseconds().count()));
  return buf;
}

namespace {

int parse_field(std::string_view text, std::size_t pos, std::size_t len, std::string_view whole) {
  int value = 0;
  const char* first = text.data() + pos;
  const auto [ptr, ec] = std::from_chars(first, first + len, value);
  if (ec != std::errc() || ptr != first + len) {
    throw ValidationError("InvalidTimestamp", "timestamp",
                          "malformed timestamp '" + std::string(whole) + "'");
  }
  return value;
}

}  // namespace

Timestamp parse_iso8601(std::string_view text) {
  // YYYY-MM-DDTHH:MM:SS.mmmZ
  auto fail = [&] {
    throw ValidationError("InvalidTimestamp", "timestamp",
                          "malformed timestamp '" + std::string(text) + "'");
  };
  if (text.size() != 24 || text[4] != '-' || text[7] != '-' || text[10] != 'T' ||
      text[13] != ':' || text[16] != ':' || text[19] != '.' || text[23] != 'Z') {
    fail();
  }
  const int y = parse_field(text, 0, 4, text);
  const int mo = parse_field(text, 5, 2, text);
  const int d = parse_field(text, 8, 2, text);
  const int h = parse_field(text, 11, 2, text);
  const int mi = parse_field(text, 14, 2, text);
  const int s = parse_field(text, 17, 2, text);
  const int ms = parse_field(text, 20, 3, text);
  const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) fail();
  return make_timestamp(y, unsigned(mo), unsigned(d), h, mi, s, ms);
}

Timestamp make_timestamp(int y, unsigned mo, unsigned d, int h, int mi, int s, int ms) {
  const sys_days day{year{y} / month{mo} / std::chrono::day{d}};
  return Timestamp{day.time_since_epoch()} + hours{h} + minutes{mi} + seconds{s} +
         milliseconds{ms};
}

std::string Month::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u", year, month);
  return buf;
}

Month Month::parse(std::string_view text) {
  if (text.size() != 7 || text[4] != '-') {
    throw ValidationError("InvalidMonth", "month", "expected YYYY-MM, got '" + std::string(text) + "'");
  }
  Month m;
  m.year = parse_field(text, 0, 4, text);
  const int mo = parse_field(text, 5, 2, text);
  if (mo < 1 || mo > 12) {
    throw ValidationError("InvalidMonth", "month", "expected YYYY-MM, got '" + std::string(text) + "'");
  }
  m.month = unsigned(mo);
  return m;
}

Month Month::of(Timestamp ts) {
  const year_month_day ymd{floor<days>(ts)};
  return Month{int(ymd.year()), unsigned(ymd.month())};
}

Timestamp Month::start() const { return make_timestamp(year, month, 1); }

Month Month::next() const {
  return month == 12 ? Month{year + 1, 1} : Month{year, month + 1};
}

Timestamp SystemClock::now() const {
  return time_point_cast<milliseconds>(system_clock::now());
}

Timestamp ManualClock::now() const {
  std::lock_guard lock(mutex_);
  return now_;
}

void ManualClock::set(Timestamp ts) {
  std::lock_guard lock(mutex_);
  now_ = ts;
}

void ManualClock::advance(milliseconds delta) {
  std::lock_guard lock(mutex_);
  now_ += delta;
}

void ManualClock::advance_to(Timestamp ts) {
  std::lock_guard lock(mutex_);
  if (ts > now_) now_ = ts;
}

}  // namespace reclab
