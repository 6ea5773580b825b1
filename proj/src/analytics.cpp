#include "reclab/analytics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "json.hpp"
#include "reclab/errors.hpp"

namespace reclab {

double ctr(std::int64_t clicked, std::int64_t delivered) {
  if (delivered == 0) throw Error("NoImpressions", "no delivered recommendations");
  if (delivered < 0 || clicked < 0 || clicked > delivered) {
    throw ValidationError("ValidationError", "clicked", "clicked must lie in [0, delivered]");
  }
  return double(clicked) / double(delivered);
}

std::string format_percent(double ratio, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f%%", decimals, ratio * 100.0);
  return buf;
}

Interval wilson_interval(std::int64_t clicked, std::int64_t delivered, double z) {
  const double p = ctr(clicked, delivered);
  const double n = double(delivered);
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = (z / denom) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  Interval ci{center - half, center + half};
  // The closed form cancels to these endpoints; rounding does not.
  if (clicked == 0) ci.low = 0.0;
  if (clicked == delivered) ci.high = 1.0;
  ci.low = std::max(0.0, ci.low);
  ci.high = std::min(1.0, ci.high);
  return ci;
}

CtrReport ctr_timeseries(std::span<const LogRecord> log, Attribution attribution, const ReportWindow& window,
                         double z) {
  struct Cell {
    std::int64_t delivered = 0;
    std::int64_t clicked = 0;
  };
  struct Origin {
    Month bucket;
    const std::string* engine;
  };
  std::unordered_map<std::string_view, Origin> by_set;
  std::map<Month, std::map<std::string, Cell>> cells;

  for (const auto& record : log) {
    if (!record.is_impression()) continue;
    const auto& r = record.impression();
    const auto bucket = Month::of(r.requested_at);
    if (!window.contains(bucket)) continue;
    const auto& engine = attribution == Attribution::serving_engine ? r.serving_engine : r.assigned_engine;
    by_set.emplace(r.set_id, Origin{bucket, &engine});
    cells[bucket][engine].delivered += std::int64_t(r.items.size());
  }
  for (const auto& record : log) {
    if (record.is_impression()) continue;
    const auto& c = record.click();
    if (c.is_duplicate) continue;
    auto it = by_set.find(c.set_id);
    if (it == by_set.end()) continue;
    ++cells[it->second.bucket][*it->second.engine].clicked;
  }

  CtrReport report;
  auto push = [&](Month bucket, std::string engine, const Cell& cell) {
    const auto ci = wilson_interval(cell.clicked, cell.delivered, z);
    report.push_back(CtrRow{bucket, std::move(engine), cell.delivered, cell.clicked,
                            ctr(cell.clicked, cell.delivered), ci.low, ci.high});
  };
  for (const auto& [bucket, engines] : cells) {
    Cell total;
    for (const auto& [engine, cell] : engines) {
      if (cell.delivered == 0) continue;  // only from malformed zero-item records
      push(bucket, engine, cell);
      total.delivered += cell.delivered;
      total.clicked += cell.clicked;
    }
    if (total.delivered > 0) push(bucket, std::string(kTotalRow), total);
  }
  return report;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "jsonl") return ReportFormat::jsonl;
  throw Error("UnknownFormat", "unknown report format '" + std::string(name) + "' (expected csv or jsonl)");
}

std::string emit_report(const CtrReport& report, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::csv) {
    out = "bucket,engine,delivered,clicked,ctr,ci_low,ci_high\n";
    char buf[256];
    for (const auto& row : report) {
      std::snprintf(buf, sizeof(buf), ",%lld,%lld,%.6f,%.6f,%.6f\n", static_cast<long long>(row.delivered),
                    static_cast<long long>(row.clicked), row.ctr, row.ci_low, row.ci_high);
      out += row.bucket.to_string();
      out += ',';
      out += row.engine;
      out += buf;
    }
    return out;
  }
  for (const auto& row : report) {
    nlohmann::ordered_json j;
    j["bucket"] = row.bucket.to_string();
    j["engine"] = row.engine;
    j["delivered"] = row.delivered;
    j["clicked"] = row.clicked;
    j["ctr"] = row.ctr;
    j["ci_low"] = row.ci_low;
    j["ci_high"] = row.ci_high;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace reclab
