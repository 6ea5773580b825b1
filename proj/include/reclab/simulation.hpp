#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "reclab/analytics.hpp"
#include "reclab/domain.hpp"
#include "reclab/http_server.hpp"

namespace reclab {

enum class MockBehaviorKind { ok, slow, error500, malformed };

struct MockBehavior {
  MockBehaviorKind kind = MockBehaviorKind::ok;
  int latency_ms = 0;  // ok and slow only

  static MockBehavior ok(int latency_ms) { return {MockBehaviorKind::ok, latency_ms}; }
  static MockBehavior slow(int latency_ms) { return {MockBehaviorKind::slow, latency_ms}; }
  static MockBehavior error500() { return {MockBehaviorKind::error500, 0}; }
  static MockBehavior malformed() { return {MockBehaviorKind::malformed, 0}; }
};

// Accepts {"behavior": "ok"|"slow"|"error500"|"malformed", "latency_ms": n}.
MockBehavior mock_behavior_from_json(const nlohmann::json& j);

// A research-partner engine on a loopback port speaking the partner wire
// protocol. Answers are a deterministic function of the request.
class MockPartnerEngine {
 public:
  explicit MockPartnerEngine(MockBehavior behavior);
  ~MockPartnerEngine();
  MockPartnerEngine(const MockPartnerEngine&) = delete;
  MockPartnerEngine& operator=(const MockPartnerEngine&) = delete;

  // Returns the endpoint URL, e.g. http://127.0.0.1:PORT/recommend
  std::string start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  std::string endpoint_url() const { return endpoint_; }
  std::int64_t requests_served() const { return served_.load(); }

  // The body an ok/slow engine returns for a request body.
  static std::string answer(const std::string& request_body);

 private:
  HttpResponse handle(const HttpRequest& request);
  // Sleeps up to ms, returning early once stop() is called.
  void pause(int ms);

  MockBehavior behavior_;
  std::unique_ptr<HttpServer> server_;
  std::string endpoint_;
  std::atomic<std::int64_t> served_{0};
  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
};

struct ClickModel {
  double default_probability = 0.0021;
  std::map<std::string, double> per_engine;  // keyed by serving engine
  double rank_decay = 1.0;                   // in (0, 1]
  double repeat_probability = 0.0;           // chance a clicked item is clicked again

  double probability(const std::string& engine, int rank) const;
};

struct SyntheticCorpusSpec {
  int documents = 300;
  int vocabulary = 600;
};

struct SimConfig {
  std::uint64_t seed = 42;
  int n_requests = 1000;
  int items_per_request = kDefaultMaxCount;
  int sim_months = 16;
  Month start_month{2017, 6};
  std::optional<std::string> corpus_path;
  SyntheticCorpusSpec synthetic;
  std::vector<std::string> stereotype;  // default: first five corpus documents
  std::map<std::string, double> allocation{{"mock_external", 0.25}, {"internal_cbf", 0.75}};
  std::vector<std::string> fallback_order{"internal_cbf", "internal_most_popular"};
  std::optional<MockBehavior> mock_engine = MockBehavior::ok(0);
  int deadline_ms = kDefaultDeadlineMs;
  ClickModel click_model;
  int workers = 1;
};

// Engine ids registered by the harness.
inline constexpr const char* kMockEngineId = "mock_external";
inline constexpr const char* kSimPartnerId = "sim_partner";

// Throws Error("ConfigInvalid").
SimConfig sim_config_from_json(const nlohmann::json& j);
SimConfig load_sim_config(const std::string& path);
void validate(const SimConfig& config);

// Deterministic pseudo-word corpus.
std::vector<Document> synthetic_corpus(std::uint64_t seed, const SyntheticCorpusSpec& shape);

struct SimStats {
  std::int64_t requests = 0;
  std::int64_t responses_with_items = 0;
  std::int64_t empty_responses = 0;
  std::int64_t failed_requests = 0;
  std::int64_t items_in_responses = 0;
  std::int64_t click_calls = 0;
  std::int64_t click_redirects = 0;
  std::int64_t impressions_stored = 0;
  std::int64_t items_stored = 0;
  std::int64_t clicks_stored = 0;
  std::int64_t fallbacks = 0;
  std::int64_t assigned_external = 0;
};

struct SimResult {
  std::string events_jsonl;
  CtrReport report;
  SimStats stats;
};

// Runs the gateway in process against a synthetic request stream and click
// model, with the mock research-partner engine behind a real loopback hop.
// With workers == 1 every output byte is a function of the config.
SimResult run_simulation(const SimConfig& config);

nlohmann::ordered_json to_json(const SimStats& stats);

}  // namespace reclab
