#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <string>
#include <string_view>

namespace reclab {

// UTC instant with millisecond resolution.
using Timestamp = std::chrono::time_point<std::chrono::system_clock, std::chrono::milliseconds>;

// "2017-06-01T12:00:00.000Z"
std::string to_iso8601(Timestamp ts);
// Accepts exactly the format produced by to_iso8601. Throws ValidationError.
Timestamp parse_iso8601(std::string_view text);

// Calendar month key, ordered chronologically.
struct Month {
  int year = 1970;
  unsigned month = 1;  // 1..12

  auto operator<=>(const Month&) const = default;
  std::string to_string() const;  // "YYYY-MM"
  static Month parse(std::string_view text);
  static Month of(Timestamp ts);
  Timestamp start() const;
  Month next() const;
};

Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                         int second = 0, int millis = 0);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override;
};

// Time moves only when told to. Used by the simulation harness so that
// timestamps in the event log are a function of the seed.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start) : now_(start) {}
  Timestamp now() const override;
  void set(Timestamp ts);
  void advance(std::chrono::milliseconds delta);
  // Moves forward to ts; never moves backwards.
  void advance_to(Timestamp ts);

 private:
  mutable std::mutex mutex_;
  Timestamp now_;
};

}  // namespace reclab
