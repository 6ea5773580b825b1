// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <atomic>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "generators.hpp"
#include "httplib.h"
#include "oracles.hpp"
#include "reclab/analytics.hpp"
#include "reclab/cli.hpp"
#include "reclab/gateway.hpp"
#include "reclab/http_server.hpp"
#include "reclab/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reclab;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("reclab-acceptance-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Shared by criteria 1 and 8.
const SimResult& big_simulation() {
  static const SimResult result = [] {
    SimConfig c;
    c.seed = 42;
    c.n_requests = 50000;
    c.items_per_request = 6;
    c.click_model.default_probability = 0.0021;
    return run_simulation(c);
  }();
  return result;
}

Outcome ctr_pipeline() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& sim = big_simulation();
  const double runtime = seconds_since(t0);
  std::int64_t delivered = 0, clicked = 0;
  for (const auto& row : sim.report) {
    if (row.engine != kTotalRow) continue;
    delivered += row.delivered;
    clicked += row.clicked;
  }
  const double overall = ctr(clicked, delivered);
  const bool pass = delivered == 300000 && std::abs(overall - 0.0021) <= 2.5e-4 && runtime <= 120.0;
  return {pass, fmt("delivered=%lld clicked=%lld ctr=%.6f |ctr-0.0021|=%.2e runtime=%.1fs", (long long)delivered,
                    (long long)clicked, overall, std::abs(overall - 0.0021), runtime)};
}

Outcome allocation() {
  AllocationConfig config{"p", {{"external", 0.25}, {"internal", 0.75}}, {}};
  Rng rng(derive_seed(20170601, 1));
  constexpr int n = 10000;
  int external = 0;
  for (int i = 0; i < n; ++i) external += assign(config, rng) == "external";
  const double share = external / double(n);
  const double e_ext = 0.25 * n, e_int = 0.75 * n;
  const double stat = (external - e_ext) * (external - e_ext) / e_ext +
                      ((n - external) - e_int) * ((n - external) - e_int) / e_int;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(1), stat));
  return {share >= 0.237 && share <= 0.263 && p > 0.001, fmt("external share=%.4f chi2=%.3f p=%.4f", share, stat, p)};
}

Outcome deadline_fallback() {
  auto index = std::make_shared<const Index>(Index::build(synthetic_corpus(7, {})));
  std::shared_ptr<EventStore> store = EventStore::in_memory();
  SystemClock clock;
  GatewayOptions options;
  options.admin_key = "admin";
  options.seed = 3;
  Gateway gateway(index, StereotypeList{}, store, clock, options);
  MockPartnerEngine slow(MockBehavior::slow(2500));
  gateway.register_engine({"ext", EngineKind::external, slow.start(), 2000});
  gateway.register_engine({"cbf", EngineKind::internal_cbf, {}, {}});
  gateway.register_engine({"pop", EngineKind::internal_most_popular, {}, {}});
  gateway.register_partner({"p", "k", ""});
  gateway.put_allocation({"p", {{"ext", 1.0}}, {"cbf", "pop"}});
  auto server = serve_gateway(gateway, "127.0.0.1", 0);

  constexpr int kRequests = 200;
  constexpr int kClients = 20;
  std::vector<double> latency_ms(kRequests, 1e9);
  std::vector<std::string> set_ids(kRequests);
  std::atomic<int> next{0};
  std::vector<std::thread> clients;
  for (int c = 0; c < kClients; ++c) {
    clients.emplace_back([&, c] {
      httplib::Client client("127.0.0.1", server->port());
      client.set_read_timeout(30, 0);
      Rng rng(derive_seed(99, std::uint64_t(c)));
      for (int i = next++; i < kRequests; i = next++) {
        const auto title = gen::phrase(rng, 2, 5) + " " + index->document(std::uint32_t(std::size_t(i) % index->doc_count())).title;
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = client.Post("/v1/recommendations", {{"X-Partner-Id", "p"}, {"X-Api-Key", "k"}},
                                     json{{"title", title}}.dump(), "application/json");
        const double ms = seconds_since(t0) * 1000.0;
        if (!res || res->status != 200) continue;
        const auto body = json::parse(res->body);
        if (body["items"].empty()) continue;
        latency_ms[i] = ms;
        set_ids[i] = body["set_id"];
      }
    });
  }
  for (auto& t : clients) t.join();
  server->stop();

  int succeeded = 0, flagged = 0;
  for (const auto& id : set_ids) {
    if (id.empty()) continue;
    ++succeeded;
    const auto imp = store->find_impression(id);
    if (imp && imp->fallback_occurred && imp->assigned_engine == "ext" && imp->serving_engine != "ext") ++flagged;
  }
  std::sort(latency_ms.begin(), latency_ms.end());
  const double p95 = latency_ms[std::size_t(std::ceil(0.95 * kRequests)) - 1];
  const bool pass = succeeded == kRequests && flagged == kRequests && p95 <= 2500.0 &&
                    store->impression_count() == std::size_t(kRequests);
  return {pass, fmt("succeeded=%d/%d fallback_flagged=%d p95=%.0fms max=%.0fms", succeeded, kRequests, flagged, p95,
                    latency_ms.back())};
}

Outcome ranking_oracle() {
  const auto docs = gen::random_corpus(404, 100);
  const auto index = Index::build(docs);
  const oracle::BruteForceTfIdf brute(docs);
  Rng rng(405);
  int mismatches = 0, empty_queries = 0, compared_items = 0;
  double worst = 0;
  for (int q = 0; q < 1000; ++q) {
    const auto title = q % 5 == 0 ? docs[rng.below(docs.size())].title : gen::phrase(rng, 1, 6);
    const int k = q % 7 == 0 ? 50 : 1 + int(rng.below(10));
    const auto expected = brute.rank(title, k);
    std::vector<RecommendationItem> got;
    bool empty_query = false;
    try {
      got = recommend_cbf(index, title, k);
    } catch (const EngineError& e) {
      empty_query = e.code() == "EmptyQuery";
    }
    if (empty_query) {
      ++empty_queries;
      if (!oracle::tokens(title).empty()) ++mismatches;
      continue;
    }
    if (got.size() != expected.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      ++compared_items;
      const double diff = std::abs(*got[i].score - expected[i].score);
      worst = std::max(worst, diff);
      if (*got[i].origin_doc_id != expected[i].doc_id || diff > 1e-9 || got[i].position != int(i) + 1) {
        ++mismatches;
        break;
      }
    }
  }
  return {mismatches == 0, fmt("queries=1000 items_compared=%d empty_queries=%d mismatches=%d max_score_diff=%.1e",
                               compared_items, empty_queries, mismatches, worst)};
}

Interval reference_wilson(std::int64_t clicked, std::int64_t n) {
  using big = boost::multiprecision::cpp_bin_float_50;
  const big z = kWilsonZ95;
  const big nn = n;
  const big p = big(clicked) / nn;
  const big denom = 1 + z * z / nn;
  const big center = (p + z * z / (2 * nn)) / denom;
  const big half = z * sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn)) / denom;
  return {static_cast<double>(center - half), static_cast<double>(center + half)};
}

Outcome analytics_oracle() {
  int row_mismatches = 0, rows = 0, records = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto log = gen::random_log(1000 + seed, 10000);
    records += int(log.size());
    const oracle::NaiveCtr naive(log);
    const auto report = ctr_timeseries(log);
    std::set<std::pair<Month, std::string>> cells;
    for (const auto& row : report) {
      ++rows;
      cells.insert({row.bucket, row.engine});
      const auto t = naive.tally(row.bucket, row.engine);
      const auto ci = reference_wilson(t.clicked, t.delivered);
      if (row.delivered != t.delivered || row.clicked != t.clicked ||
          row.ctr != double(t.clicked) / double(t.delivered) || std::abs(row.ci_low - ci.low) > 1e-9 ||
          std::abs(row.ci_high - ci.high) > 1e-9) {
        ++row_mismatches;
      }
    }
    if (cells != naive.cells()) ++row_mismatches;
  }
  Rng rng(77);
  int wilson_bad = 0;
  for (int i = 0; i < 20000; ++i) {
    const std::int64_t n = 1 + std::int64_t(rng.below(i % 2 ? 50 : 2'000'000));
    std::int64_t c = std::int64_t(rng.below(std::uint64_t(n + 1)));
    if (i % 10 == 0) c = 0;
    if (i % 10 == 1) c = n;
    const auto got = wilson_interval(c, n);
    const auto want = reference_wilson(c, n);
    if (std::abs(got.low - want.low) > 1e-9 || std::abs(got.high - want.high) > 1e-9) ++wilson_bad;
    if (c == 0 && got.low != 0.0) ++wilson_bad;
    if (c == n && got.high != 1.0) ++wilson_bad;
  }
  return {row_mismatches == 0 && wilson_bad == 0,
          fmt("logs=20 records=%d rows=%d row_mismatches=%d wilson_checks=20000 wilson_failures=%d", records, rows,
              row_mismatches, wilson_bad)};
}

Outcome concurrency_integrity() {
  const auto dir = scratch_dir("integrity");
  auto index = std::make_shared<const Index>(Index::build(synthetic_corpus(11, {})));
  std::shared_ptr<EventStore> store = EventStore::open_file((dir / "events.jsonl").string(), true);
  SystemClock clock;
  GatewayOptions options;
  options.admin_key = "admin";
  Gateway gateway(index, StereotypeList{}, store, clock, options);
  gateway.register_engine({"cbf", EngineKind::internal_cbf, {}, {}});
  gateway.register_engine({"pop", EngineKind::internal_most_popular, {}, {}});
  gateway.register_partner({"p", "k", ""});
  gateway.put_allocation({"p", {{"cbf", 0.5}, {"pop", 0.5}}, {"cbf", "pop"}});
  auto server = serve_gateway(gateway, "127.0.0.1", 0);

  constexpr int kClients = 32;
  constexpr int kEach = 1000;
  std::atomic<int> errors{0};
  std::atomic<long> clicks_sent{0};
  std::mutex first_error_mutex;
  std::string first_error = "none";
  auto note_error = [&](const httplib::Result& res) {
    ++errors;
    std::lock_guard lock(first_error_mutex);
    if (first_error == "none") first_error = res ? "status " + std::to_string(res->status) : httplib::to_string(res.error());
  };
  std::vector<std::thread> clients;
  for (int c = 0; c < kClients; ++c) {
    clients.emplace_back([&, c] {
      httplib::Client client("127.0.0.1", server->port());
      client.set_keep_alive(true);
      client.set_read_timeout(60, 0);
      for (int i = 0; i < kEach; ++i) {
        const auto& doc = index->document(std::uint32_t(std::size_t(c * kEach + i) % index->doc_count()));
        const auto res = client.Post("/v1/recommendations", {{"X-Partner-Id", "p"}, {"X-Api-Key", "k"}},
                                     json{{"title", doc.title + " extra"}}.dump(), "application/json");
        if (!res || res->status != 200) {
          note_error(res);
          continue;
        }
        const auto body = json::parse(res->body);
        if (i % 10 == 0 && !body["items"].empty()) {
          const auto click = client.Get(body["items"][i % body["items"].size()]["click_url"].get<std::string>());
          if (!click || click->status != 302) note_error(click);
          ++clicks_sent;
        }
      }
    });
  }
  for (auto& t : clients) t.join();
  server->stop();

  int orphan_clicks = 0;
  for (const auto& rec : store->records()) {
    if (!rec.is_impression() && !store->target_url(rec.click().set_id, rec.click().position)) ++orphan_clicks;
  }
  const auto first = store->export_events();
  auto copy = EventStore::in_memory();
  std::istringstream in(first);
  copy->import_events(in);
  const bool identical = copy->export_events() == first;

  // The file on disk must hold the same events.
  store.reset();
  const auto reopened = EventStore::open_file((dir / "events.jsonl").string(), false);
  const bool durable = reopened->export_events() == first;
  fs::remove_all(dir);

  const bool pass = errors == 0 && copy->impression_count() == 32000 && copy->item_count() == 192000 &&
                    copy->click_count() == std::size_t(clicks_sent.load()) && orphan_clicks == 0 && identical &&
                    durable;
  return {pass, fmt("impressions=%zu items=%zu clicks=%zu/%ld orphan_clicks=%d errors=%d (first: %s) roundtrip_identical=%s "
                    "reopened_identical=%s",
                    copy->impression_count(), copy->item_count(), copy->click_count(), clicks_sent.load(),
                    orphan_clicks, errors.load(), first_error.c_str(), identical ? "yes" : "no", durable ? "yes" : "no")};
}

Outcome determinism() {
  const auto dir = scratch_dir("determinism");
  {
    std::ofstream(dir / "sim.json") << R"({"seed": 2017, "n_requests": 5000, "sim_months": 16})";
  }
  std::ostringstream out, err;
  const int a = run_cli({"simulate", "--config", (dir / "sim.json").string(), "--out", (dir / "a").string()}, out, err);
  const int b = run_cli({"simulate", "--config", (dir / "sim.json").string(), "--out", (dir / "b").string()}, out, err);
  const auto events_a = slurp(dir / "a/events.jsonl");
  const auto report_a = slurp(dir / "a/report.csv");
  const bool events_same = !events_a.empty() && events_a == slurp(dir / "b/events.jsonl");
  const bool report_same = report_a.find('\n') + 1 < report_a.size() && report_a == slurp(dir / "b/report.csv");
  fs::remove_all(dir);
  return {a == 0 && b == 0 && events_same && report_same,
          fmt("exit=%d,%d events_bytes=%zu identical=%s report_identical=%s", a, b, events_a.size(),
              events_same ? "yes" : "no", report_same ? "yes" : "no")};
}

// Months ascend; each month lists its engines in id order, then a total row
// whose counts are the exact sums of the engine rows.
int shape_violations(const CtrReport& report) {
  int bad = 0;
  std::size_t i = 0;
  std::optional<Month> previous;
  while (i < report.size()) {
    const Month month = report[i].bucket;
    if (previous && month <= *previous) ++bad;
    previous = month;
    std::int64_t delivered = 0, clicked = 0;
    std::string last_engine;
    std::size_t engines = 0;
    for (; i < report.size() && report[i].bucket == month && report[i].engine != kTotalRow; ++i, ++engines) {
      if (!last_engine.empty() && report[i].engine <= last_engine) ++bad;
      last_engine = report[i].engine;
      delivered += report[i].delivered;
      clicked += report[i].clicked;
    }
    if (engines == 0 || i == report.size() || report[i].bucket != month) {
      ++bad;  // month without engine rows or without its total row
      continue;
    }
    if (report[i].delivered != delivered || report[i].clicked != clicked) ++bad;
    ++i;
  }
  return bad;
}

Outcome report_shape() {
  const auto& sim = big_simulation();
  int bad = shape_violations(sim.report);
  std::set<Month> months;
  std::set<std::string> engines;
  for (const auto& row : sim.report) {
    months.insert(row.bucket);
    engines.insert(row.engine);
  }
  int random_bad = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) random_bad += shape_violations(ctr_timeseries(gen::random_log(seed, 5000)));
  return {bad == 0 && random_bad == 0 && months.size() == 16 && engines.count(std::string(kTotalRow)),
          fmt("simulated rows=%zu months=%zu engines+total=%zu violations=%d random_log_violations=%d",
              sim.report.size(), months.size(), engines.size(), bad, random_bad)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 ctr-pipeline-fidelity", ctr_pipeline},
      {"AC2 allocation-fidelity", allocation},
      {"AC3 deadline-and-fallback", deadline_fallback},
      {"AC4 ranking-oracle-equivalence", ranking_oracle},
      {"AC5 analytics-oracle-equivalence", analytics_oracle},
      {"AC6 event-integrity-under-concurrency", concurrency_integrity},
      {"AC7 determinism", determinism},
      {"AC8 report-shape", report_shape},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    failed += !outcome.pass;
    std::cout << (outcome.pass ? "PASS " : "FAIL ") << name << ": " << outcome.detail
              << fmt(" (%.1fs)", seconds_since(t0)) << std::endl;
  }
  std::error_code ec;
  fs::remove_all(fs::temp_directory_path() / ("reclab-acceptance-" + std::to_string(::getpid())), ec);
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - std::size_t(failed) << "/" << criteria.size()
            << std::endl;
  return failed ? 1 : 0;
}
