#include "reclab/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "reclab/errors.hpp"
#include "reclab/gateway.hpp"

namespace reclab {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

MockBehavior mock_behavior_from_json(const json& j) {
  const auto name = j.at("behavior").get<std::string>();
  const int latency = j.value("latency_ms", 0);
  if (latency < 0) throw Error("ConfigInvalid", "mock engine latency_ms must be >= 0");
  if (name == "ok") return MockBehavior::ok(latency);
  if (name == "slow") return MockBehavior::slow(latency);
  if (name == "error500") return MockBehavior::error500();
  if (name == "malformed") return MockBehavior::malformed();
  throw Error("ConfigInvalid", "unknown mock engine behavior '" + name + "'");
}

MockPartnerEngine::MockPartnerEngine(MockBehavior behavior) : behavior_(behavior) {}

MockPartnerEngine::~MockPartnerEngine() { stop(); }

std::string MockPartnerEngine::start(const std::string& host, int port) {
  {
    std::lock_guard lock(stop_mutex_);
    stopping_ = false;
  }
  server_ = std::make_unique<HttpServer>([this](const HttpRequest& r) { return handle(r); }, 64);
  const int bound = server_->start(host, port);
  endpoint_ = "http://" + host + ":" + std::to_string(bound) + "/recommend";
  return endpoint_;
}

void MockPartnerEngine::stop() {
  {
    std::lock_guard lock(stop_mutex_);
    stopping_ = true;
  }
  stop_cv_.notify_all();
  if (server_) server_->stop();
  server_.reset();
}

void MockPartnerEngine::pause(int ms) {
  if (ms <= 0) return;
  std::unique_lock lock(stop_mutex_);
  stop_cv_.wait_for(lock, std::chrono::milliseconds(ms), [this] { return stopping_; });
}

std::string MockPartnerEngine::answer(const std::string& request_body) {
  const auto request = json::parse(request_body);
  const auto title = request.at("query").at("title").get<std::string>();
  const int max_items = std::clamp(request.value("max_items", kDefaultMaxCount), 0, kMaxCountCap);
  std::uint32_t key = 2166136261u;  // FNV-1a
  for (unsigned char c : title) key = (key ^ c) * 16777619u;
  json items = json::array();
  for (int i = 1; i <= max_items; ++i) {
    char url[128];
    std::snprintf(url, sizeof(url), "https://partner.example.org/articles/%08llx-%d",
                  static_cast<unsigned long long>(key), i);
    items.push_back({{"title", "Related to: " + title + " (" + std::to_string(i) + ")"},
                     {"url", url},
                     {"score", 1.0 / double(i)},
                     {"external_id", "ext-" + std::to_string(i)}});
  }
  return json{{"items", items}}.dump();
}

HttpResponse MockPartnerEngine::handle(const HttpRequest& request) {
  ++served_;
  HttpResponse r;
  switch (behavior_.kind) {
    case MockBehaviorKind::error500:
      r.status = 500;
      r.body = R"({"error":"internal"})";
      return r;
    case MockBehaviorKind::malformed:
      r.status = 200;
      r.body = R"({"items": [{"title": "no url here"}, )";
      return r;
    case MockBehaviorKind::ok:
    case MockBehaviorKind::slow:
      pause(behavior_.latency_ms);
      try {
        r.body = answer(request.body);
      } catch (const json::exception& e) {
        r.status = 400;
        r.body = json{{"error", e.what()}}.dump();
      }
      return r;
  }
  return r;
}

double ClickModel::probability(const std::string& engine, int rank) const {
  auto it = per_engine.find(engine);
  const double base = it == per_engine.end() ? default_probability : it->second;
  return base * std::pow(rank_decay, double(rank - 1));
}

namespace {

double read_probability(const json& j, const char* what) {
  if (!j.is_number()) throw Error("ConfigInvalid", std::string(what) + " must be a number");
  return j.get<double>();
}

}  // namespace

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.n_requests = j.value("n_requests", c.n_requests);
    c.items_per_request = j.value("items_per_request", c.items_per_request);
    c.sim_months = j.value("sim_months", c.sim_months);
    if (j.contains("start_month")) c.start_month = Month::parse(j["start_month"].get<std::string>());
    if (j.contains("corpus_path")) c.corpus_path = j["corpus_path"].get<std::string>();
    if (auto s = j.find("synthetic_corpus"); s != j.end()) {
      c.synthetic.documents = s->value("documents", c.synthetic.documents);
      c.synthetic.vocabulary = s->value("vocabulary", c.synthetic.vocabulary);
    }
    c.stereotype = j.value("stereotype", c.stereotype);
    if (auto a = j.find("allocation"); a != j.end()) {
      c.allocation.clear();
      for (const auto& [id, w] : a->items()) c.allocation[id] = w.get<double>();
    }
    c.fallback_order = j.value("fallback_order", c.fallback_order);
    if (auto m = j.find("mock_engine"); m != j.end()) {
      c.mock_engine = m->is_null() ? std::nullopt : std::optional(mock_behavior_from_json(*m));
    }
    c.deadline_ms = j.value("deadline_ms", c.deadline_ms);
    if (auto cm = j.find("click_model"); cm != j.end()) {
      if (cm->contains("default_probability")) {
        c.click_model.default_probability = read_probability((*cm)["default_probability"], "default_probability");
      }
      if (auto e = cm->find("engines"); e != cm->end()) {
        for (const auto& [id, p] : e->items()) c.click_model.per_engine[id] = read_probability(p, "engine probability");
      }
      c.click_model.rank_decay = cm->value("rank_decay", c.click_model.rank_decay);
      c.click_model.repeat_probability = cm->value("repeat_probability", c.click_model.repeat_probability);
    }
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw Error("ConfigInvalid", std::string("simulation config: ") + e.what());
  } catch (const ValidationError& e) {
    throw Error("ConfigInvalid", std::string("simulation config: ") + e.what());
  }
  validate(c);
  return c;
}

SimConfig load_sim_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot open simulation config '" + path + "'");
  try {
    return sim_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("ConfigInvalid", "simulation config '" + path + "' is not JSON: " + e.what());
  }
}

void validate(const SimConfig& c) {
  auto fail = [](const std::string& m) { throw Error("ConfigInvalid", "simulation config: " + m); };
  auto prob = [&](double p, const std::string& what) {
    if (!(p >= 0.0 && p <= 1.0)) fail(what + " must be in [0, 1]");
  };
  if (c.n_requests < 1) fail("n_requests must be positive");
  if (c.items_per_request < 1 || c.items_per_request > kMaxCountCap) fail("items_per_request must be in [1, 50]");
  if (c.sim_months < 1) fail("sim_months must be positive");
  if (c.workers < 1) fail("workers must be positive");
  if (c.deadline_ms < 1) fail("deadline_ms must be positive");
  if (c.allocation.empty()) fail("allocation is empty");
  if (!c.corpus_path && (c.synthetic.documents < 7 || c.synthetic.vocabulary < 20)) {
    fail("synthetic corpus needs at least 7 documents and 20 words");
  }
  prob(c.click_model.default_probability, "default_probability");
  for (const auto& [id, p] : c.click_model.per_engine) prob(p, "click probability of " + id);
  prob(c.click_model.repeat_probability, "repeat_probability");
  if (!(c.click_model.rank_decay > 0.0 && c.click_model.rank_decay <= 1.0)) fail("rank_decay must be in (0, 1]");
}

std::vector<Document> synthetic_corpus(std::uint64_t seed, const SyntheticCorpusSpec& shape) {
  static constexpr const char* kOnsets[] = {"b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "tr", "st", "pl"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "eo"};
  Rng rng(derive_seed(seed, 101));

  std::vector<std::string> words;
  while (int(words.size()) < shape.vocabulary) {
    std::string w;
    const auto syllables = 2 + rng.below(3);
    for (std::uint64_t s = 0; s < syllables; ++s) {
      w += kOnsets[rng.below(std::size(kOnsets))];
      w += kVowels[rng.below(std::size(kVowels))];
    }
    if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(std::move(w));
  }
  // Zipf-like word frequencies.
  std::vector<double> cumulative;
  double total = 0.0;
  for (std::size_t r = 0; r < words.size(); ++r) {
    total += 1.0 / std::pow(double(r + 1), 0.8);
    cumulative.push_back(total);
  }
  auto draw_word = [&]() -> const std::string& {
    const double u = rng.uniform01() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return words[std::min<std::size_t>(std::size_t(it - cumulative.begin()), words.size() - 1)];
  };
  auto phrase = [&](std::uint64_t n) {
    std::string out;
    for (std::uint64_t i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += draw_word();
    }
    return out;
  };

  std::vector<Document> docs;
  for (int d = 0; d < shape.documents; ++d) {
    char id[32];
    std::snprintf(id, sizeof(id), "doc-%05d", d);
    Document doc;
    doc.doc_id = id;
    doc.title = phrase(3 + rng.below(6));
    doc.title[0] = char(doc.title[0] - 'a' + 'A');
    if (rng.below(4) != 0) doc.abstract = phrase(10 + rng.below(31));
    doc.url = std::string("https://corpus.example.org/") + id;
    docs.push_back(std::move(doc));
  }
  return docs;
}

namespace {

std::string perturb_title(const std::string& title, Rng& rng) {
  std::vector<std::string> words;
  std::istringstream in(title);
  for (std::string w; in >> w;) words.push_back(w);
  if (words.size() < 2) return title;
  const auto drop = rng.below(words.size());
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i == drop) continue;
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

SimResult run_simulation(const SimConfig& config) {
  validate(config);

  const auto docs = config.corpus_path ? read_corpus_file(*config.corpus_path) : synthetic_corpus(config.seed, config.synthetic);
  auto index = std::make_shared<const Index>(Index::build(docs));
  std::vector<std::string> stereotype_ids = config.stereotype;
  if (stereotype_ids.empty()) {
    for (std::uint32_t d = 0; d < std::min<std::size_t>(5, index->doc_count()); ++d) {
      stereotype_ids.push_back(index->doc_id(d));
    }
  }
  StereotypeList stereotypes(*index, stereotype_ids);

  const Timestamp start = config.start_month.start();
  Month end_month = config.start_month;
  for (int m = 0; m < config.sim_months; ++m) end_month = end_month.next();
  const auto span_ms = (end_month.start() - start).count();

  ManualClock clock(start);
  auto store = std::shared_ptr<EventStore>(EventStore::in_memory());
  GatewayOptions options;
  options.admin_key = "sim-admin";
  options.seed = config.seed;
  options.latency = LatencySource::clock;
  Gateway gateway(index, std::move(stereotypes), store, clock, options);

  std::unique_ptr<MockPartnerEngine> mock;
  if (config.mock_engine) {
    mock = std::make_unique<MockPartnerEngine>(*config.mock_engine);
    const auto url = mock->start();
    gateway.register_engine(EngineDescriptor{kMockEngineId, EngineKind::external, url, config.deadline_ms});
  }
  gateway.register_engine({"internal_cbf", EngineKind::internal_cbf, {}, {}});
  gateway.register_engine({"internal_most_popular", EngineKind::internal_most_popular, {}, {}});
  gateway.register_engine({"internal_stereotype", EngineKind::internal_stereotype, {}, {}});
  gateway.register_partner({kSimPartnerId, "sim-key", "Simulated platform partner"});
  AllocationConfig allocation;
  allocation.partner_id = kSimPartnerId;
  for (const auto& [id, weight] : config.allocation) allocation.entries.push_back({id, weight});
  allocation.fallback_order = config.fallback_order;
  try {
    gateway.put_allocation(allocation);
  } catch (const ValidationError& e) {
    throw Error("ConfigInvalid", std::string("simulation allocation: ") + e.what());
  }

  const std::uint64_t request_stream = derive_seed(config.seed, 2);
  std::vector<SimStats> per_worker(std::size_t(config.workers));

  auto run_worker = [&](int worker) {
    auto& stats = per_worker[std::size_t(worker)];
    for (int i = worker; i < config.n_requests; i += config.workers) {
      Rng rng(derive_seed(request_stream, std::uint64_t(i)));
      const auto& doc = index->document(std::uint32_t(rng.below(index->doc_count())));
      const auto title = perturb_title(doc.title, rng);
      const Timestamp at = start + std::chrono::milliseconds(span_ms * i / config.n_requests);
      clock.advance_to(at);

      HttpRequest request{"POST", "/v1/recommendations",
                          {{"x-partner-id", kSimPartnerId}, {"x-api-key", "sim-key"}},
                          json{{"title", title}, {"max_count", config.items_per_request}}.dump()};
      ++stats.requests;
      const auto response = gateway.dispatch(request);
      if (response.status != 200) {
        ++stats.failed_requests;
        continue;
      }
      const auto body = json::parse(response.body);
      const auto& items = body.at("items");
      if (items.empty()) {
        ++stats.empty_responses;
        continue;
      }
      ++stats.responses_with_items;
      stats.items_in_responses += std::int64_t(items.size());
      const auto impression = store->find_impression(body.at("set_id").get<std::string>());
      if (impression->fallback_occurred) ++stats.fallbacks;
      if (impression->assigned_engine == kMockEngineId) ++stats.assigned_external;

      for (const auto& item : items) {
        const int position = item.at("position").get<int>();
        if (!rng.bernoulli(config.click_model.probability(impression->serving_engine, position))) continue;
        clock.advance_to(at + std::chrono::seconds(1));
        const HttpRequest click{"GET", item.at("click_url").get<std::string>(), {}, {}};
        int clicks = 1;
        while (rng.bernoulli(config.click_model.repeat_probability) && clicks < 3) ++clicks;
        for (int c = 0; c < clicks; ++c) {
          ++stats.click_calls;
          if (gateway.dispatch(click).status == 302) ++stats.click_redirects;
        }
      }
    }
  };

  if (config.workers == 1) {
    run_worker(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < config.workers; ++w) threads.emplace_back(run_worker, w);
    for (auto& t : threads) t.join();
  }
  if (mock) mock->stop();

  SimResult result;
  for (const auto& s : per_worker) {
    result.stats.requests += s.requests;
    result.stats.responses_with_items += s.responses_with_items;
    result.stats.empty_responses += s.empty_responses;
    result.stats.failed_requests += s.failed_requests;
    result.stats.items_in_responses += s.items_in_responses;
    result.stats.click_calls += s.click_calls;
    result.stats.click_redirects += s.click_redirects;
    result.stats.fallbacks += s.fallbacks;
    result.stats.assigned_external += s.assigned_external;
  }
  result.stats.impressions_stored = std::int64_t(store->impression_count());
  result.stats.items_stored = std::int64_t(store->item_count());
  result.stats.clicks_stored = std::int64_t(store->click_count());
  result.events_jsonl = store->export_events();
  const auto records = store->records();
  result.report = ctr_timeseries(records);
  return result;
}

ojson to_json(const SimStats& s) {
  ojson j;
  j["requests"] = s.requests;
  j["responses_with_items"] = s.responses_with_items;
  j["empty_responses"] = s.empty_responses;
  j["failed_requests"] = s.failed_requests;
  j["items_in_responses"] = s.items_in_responses;
  j["click_calls"] = s.click_calls;
  j["click_redirects"] = s.click_redirects;
  j["impressions_stored"] = s.impressions_stored;
  j["items_stored"] = s.items_stored;
  j["clicks_stored"] = s.clicks_stored;
  j["fallbacks"] = s.fallbacks;
  j["assigned_external"] = s.assigned_external;
  return j;
}

}  // namespace reclab
