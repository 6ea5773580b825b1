#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "reclab/event_store.hpp"
#include "reclab/time.hpp"

namespace reclab {

inline constexpr std::string_view kTotalRow = "total";
inline constexpr double kWilsonZ95 = 1.96;

// clicked / delivered. Throws Error("NoImpressions") when delivered == 0 and
// ValidationError when clicked is outside [0, delivered].
double ctr(std::int64_t clicked, std::int64_t delivered);

// "0.21%"
std::string format_percent(double ratio, int decimals = 2);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Wilson score interval for clicked/delivered. The bounds are exactly 0 at
// clicked == 0 and exactly 1 at clicked == delivered.
Interval wilson_interval(std::int64_t clicked, std::int64_t delivered, double z = kWilsonZ95);

struct CtrRow {
  Month bucket;
  std::string engine;  // engine id, or kTotalRow
  std::int64_t delivered = 0;
  std::int64_t clicked = 0;
  double ctr = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;

  bool operator==(const CtrRow&) const = default;
};

using CtrReport = std::vector<CtrRow>;

enum class Attribution { serving_engine, assigned_engine };

struct ReportWindow {
  std::optional<Month> from;  // inclusive
  std::optional<Month> to;    // inclusive

  bool contains(Month m) const { return (!from || m >= *from) && (!to || m <= *to); }
};

// Monthly CTR per engine plus a pooled "total" row per month. Impressions are
// bucketed by requested_at; a click counts toward its impression's bucket and
// engine whatever its own time; duplicate clicks are excluded. Rows are
// ordered by month, then engine id, with "total" last in each month.
CtrReport ctr_timeseries(std::span<const LogRecord> log, Attribution attribution = Attribution::serving_engine,
                         const ReportWindow& window = {}, double z = kWilsonZ95);

enum class ReportFormat { csv, jsonl };

// Throws Error("UnknownFormat").
ReportFormat parse_report_format(std::string_view name);

// CSV header: bucket,engine,delivered,clicked,ctr,ci_low,ci_high
std::string emit_report(const CtrReport& report, ReportFormat format);

}  // namespace reclab
