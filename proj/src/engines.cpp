#include "reclab/engines.hpp"

#include <algorithm>
#include <condition_variable>
#include <thread>
#include <unordered_set>

#include "httplib.h"

namespace reclab {

using nlohmann::json;

std::string_view to_string(EngineKind kind) {
  switch (kind) {
    case EngineKind::internal_cbf: return "internal_cbf";
    case EngineKind::internal_most_popular: return "internal_most_popular";
    case EngineKind::internal_stereotype: return "internal_stereotype";
    case EngineKind::external: return "external";
  }
  return "unknown";
}

EngineKind parse_engine_kind(std::string_view text) {
  for (auto k : {EngineKind::internal_cbf, EngineKind::internal_most_popular,
                 EngineKind::internal_stereotype, EngineKind::external}) {
    if (to_string(k) == text) return k;
  }
  throw ValidationError("ValidationError", "kind", "unknown engine kind '" + std::string(text) + "'");
}

EngineDescriptor validated(EngineDescriptor d) {
  if (d.engine_id.empty()) throw ValidationError("ValidationError", "engine_id", "engine_id is empty");
  for (char c : d.engine_id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    if (!ok) {
      throw ValidationError("ValidationError", "engine_id", "engine_id may use only letters, digits, '_', '-', '.'");
    }
  }
  if (d.engine_id == "total") throw ValidationError("ValidationError", "engine_id", "'total' is reserved");
  if (d.kind == EngineKind::external) {
    if (!d.endpoint_url || !is_http_url(*d.endpoint_url)) {
      throw ValidationError("ValidationError", "endpoint_url",
                            "external engine '" + d.engine_id + "' needs an http(s) endpoint_url");
    }
    if (!d.deadline_ms) d.deadline_ms = kDefaultDeadlineMs;
    if (*d.deadline_ms <= 0) {
      throw ValidationError("ValidationError", "deadline_ms", "deadline_ms must be positive");
    }
  } else {
    if (d.endpoint_url) {
      throw ValidationError("ValidationError", "endpoint_url", "internal engines take no endpoint_url");
    }
    if (d.deadline_ms) {
      throw ValidationError("ValidationError", "deadline_ms", "internal engines take no deadline_ms");
    }
  }
  return d;
}

EngineDescriptor descriptor_from_json(const json& j) {
  auto field_error = [](const char* field) {
    return ValidationError("ValidationError", field, std::string("missing or mistyped field '") + field + "'");
  };
  if (!j.is_object()) throw ValidationError("ValidationError", "body", "engine descriptor must be an object");
  EngineDescriptor d;
  auto id = j.find("engine_id");
  if (id == j.end() || !id->is_string()) throw field_error("engine_id");
  d.engine_id = id->get<std::string>();
  auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) throw field_error("kind");
  d.kind = parse_engine_kind(kind->get<std::string>());
  if (auto it = j.find("endpoint_url"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw field_error("endpoint_url");
    d.endpoint_url = it->get<std::string>();
  }
  if (auto it = j.find("deadline_ms"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw field_error("deadline_ms");
    d.deadline_ms = it->get<int>();
  }
  return validated(std::move(d));
}

json to_json(const EngineDescriptor& d) {
  json j;
  j["engine_id"] = d.engine_id;
  j["kind"] = std::string(to_string(d.kind));
  if (d.endpoint_url) j["endpoint_url"] = *d.endpoint_url;
  if (d.deadline_ms) j["deadline_ms"] = *d.deadline_ms;
  return j;
}

namespace {

RecommendationItem item_for(const Index& index, std::uint32_t doc, int position, std::optional<double> score) {
  const auto& d = index.document(doc);
  return RecommendationItem{position, d.title, d.url, score, d.doc_id};
}

}  // namespace

std::vector<RecommendationItem> recommend_cbf(const Index& index, std::string_view raw_title, int k) {
  if (k < 1) throw ValidationError("ValidationError", "k", "k must be >= 1");
  std::string normalized;
  try {
    normalized = normalize_title(raw_title);
  } catch (const ValidationError&) {
    throw EngineError("EmptyQuery", "query has no indexable terms");
  }
  const auto tokens = tokenize(normalized);
  if (tokens.empty()) throw EngineError("EmptyQuery", "query has no indexable terms");

  std::vector<RecommendationItem> out;
  for (const auto& s : index.score_all(tokens)) {
    if (int(out.size()) == k) break;
    if (index.normalized_title(s.doc) == normalized) continue;
    out.push_back(item_for(index, s.doc, int(out.size()) + 1, s.score));
  }
  return out;
}

std::vector<RecommendationItem> recommend_most_popular(const Index& index, const ClickCounts& counts, int k) {
  if (k < 1) throw ValidationError("ValidationError", "k", "k must be >= 1");
  std::vector<std::pair<std::int64_t, std::uint32_t>> ranked;
  ranked.reserve(index.doc_count());
  for (std::uint32_t d = 0; d < index.doc_count(); ++d) {
    auto it = counts.find(index.doc_id(d));
    ranked.emplace_back(it == counts.end() ? 0 : it->second, d);
  }
  const auto n = std::min<std::size_t>(std::size_t(k), ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + std::ptrdiff_t(n), ranked.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                    });
  std::vector<RecommendationItem> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(item_for(index, ranked[i].second, int(i) + 1, double(ranked[i].first)));
  }
  return out;
}

StereotypeList::StereotypeList(const Index& index, std::vector<std::string> doc_ids)
    : doc_ids_(std::move(doc_ids)) {
  std::unordered_set<std::string> seen;
  for (const auto& id : doc_ids_) {
    if (!index.contains(id)) {
      throw ValidationError("ValidationError", "stereotype", "stereotype doc_id '" + id + "' is not in the corpus");
    }
    if (!seen.insert(id).second) {
      throw ValidationError("ValidationError", "stereotype", "stereotype doc_id '" + id + "' is repeated");
    }
  }
}

std::vector<RecommendationItem> recommend_stereotype(const Index& index, const StereotypeList& list, int k) {
  if (k < 1) throw ValidationError("ValidationError", "k", "k must be >= 1");
  if (list.empty()) throw EngineError("StereotypeUnconfigured", "no stereotype documents configured");
  std::vector<RecommendationItem> out;
  for (const auto& id : list.doc_ids()) {
    if (int(out.size()) == k) break;
    out.push_back(item_for(index, index.doc_number(id), int(out.size()) + 1, std::nullopt));
  }
  return out;
}

std::vector<RecommendationItem> parse_external_payload(std::string_view body, int k) {
  auto invalid = [](const std::string& reason) { return EngineError("InvalidPayload", reason); };
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw invalid(std::string("body is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw invalid("body is not an object");
  auto items = j.find("items");
  if (items == j.end() || !items->is_array()) throw invalid("items: missing or not an array");

  std::vector<RecommendationItem> out;
  for (const auto& entry : *items) {
    if (int(out.size()) == k) break;
    if (!entry.is_object()) throw invalid("items: entry is not an object");
    RecommendationItem item;
    item.position = int(out.size()) + 1;
    if (auto t = entry.find("title"); t != entry.end() && t->is_string()) item.title = t->get<std::string>();
    if (auto u = entry.find("url"); u != entry.end() && u->is_string()) item.target_url = u->get<std::string>();
    if (auto s = entry.find("score"); s != entry.end() && !s->is_null()) {
      if (!s->is_number()) throw invalid("score: not a number");
      item.score = s->get<double>();
    }
    try {
      validate_item(item);
    } catch (const ValidationError& e) {
      throw invalid(e.field());
    }
    out.push_back(std::move(item));
  }
  return out;
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

struct PendingCall {
  std::mutex mutex;
  std::condition_variable done_cv;
  bool done = false;
  httplib::Result result{nullptr, httplib::Error::Unknown};
};

}  // namespace

std::vector<RecommendationItem> fetch_external(const EngineDescriptor& descriptor, std::string_view query_title,
                                               int k, std::chrono::milliseconds deadline,
                                               std::string_view request_id) {
  if (descriptor.kind != EngineKind::external || !descriptor.endpoint_url) {
    throw EngineError("TransportError", "engine '" + descriptor.engine_id + "' is not external");
  }
  const auto started = std::chrono::steady_clock::now();
  const auto due = started + deadline;
  const auto endpoint = split_endpoint(*descriptor.endpoint_url);

  json request;
  request["request_id"] = std::string(request_id);
  request["query"] = {{"title", std::string(query_title)}};
  request["max_items"] = k;
  request["deadline_ms"] = deadline.count();

  auto client = std::make_shared<httplib::Client>(endpoint.base);
  if (!client->is_valid()) {
    throw EngineError("TransportError", "cannot create client for '" + *descriptor.endpoint_url + "'");
  }
  client->set_connection_timeout(deadline);
  client->set_read_timeout(deadline);
  client->set_write_timeout(deadline);
  client->set_keep_alive(false);

  // The call runs on its own thread so the deadline bounds the whole
  // exchange, not each socket operation. On expiry the socket is shut down
  // and the worker unwinds on its own.
  auto call = std::make_shared<PendingCall>();
  std::thread([call, client, path = endpoint.path, body = request.dump()] {
    auto res = client->Post(path, body, "application/json");
    std::lock_guard lock(call->mutex);
    call->result = std::move(res);
    call->done = true;
    call->done_cv.notify_all();
  }).detach();

  std::unique_lock lock(call->mutex);
  if (!call->done_cv.wait_until(lock, due, [&] { return call->done; })) {
    lock.unlock();
    client->stop();
    throw EngineError("DeadlineExceeded", "engine '" + descriptor.engine_id + "' gave no answer within " +
                                              std::to_string(deadline.count()) + " ms");
  }
  auto& res = call->result;
  if (!res) {
    if (std::chrono::steady_clock::now() >= due) {
      throw EngineError("DeadlineExceeded", "engine '" + descriptor.engine_id + "' timed out");
    }
    throw EngineError("TransportError", "engine '" + descriptor.engine_id + "': " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw EngineError("TransportError",
                      "engine '" + descriptor.engine_id + "' answered HTTP " + std::to_string(res->status));
  }
  return parse_external_payload(res->body, k);
}

PopularityCache::PopularityCache(Source source, const Clock& clock, std::chrono::milliseconds refresh_interval)
    : source_(std::move(source)), clock_(clock), interval_(refresh_interval) {}

std::shared_ptr<const ClickCounts> PopularityCache::snapshot() {
  const auto now = clock_.now();
  std::lock_guard lock(mutex_);
  if (!current_ || !loaded_at_ || now - *loaded_at_ >= interval_ || now < *loaded_at_) {
    current_ = std::make_shared<const ClickCounts>(source_(now));
    loaded_at_ = now;
  }
  return current_;
}

namespace {

class CbfEngine final : public Engine {
 public:
  CbfEngine(EngineDescriptor d, std::shared_ptr<const Index> index) : d_(std::move(d)), index_(std::move(index)) {}
  const EngineDescriptor& descriptor() const override { return d_; }
  std::vector<RecommendationItem> recommend(const EngineRequest& r) override {
    return recommend_cbf(*index_, r.raw_title, r.max_items);
  }

 private:
  EngineDescriptor d_;
  std::shared_ptr<const Index> index_;
};

class MostPopularEngine final : public Engine {
 public:
  MostPopularEngine(EngineDescriptor d, std::shared_ptr<const Index> index, std::shared_ptr<PopularityCache> cache)
      : d_(std::move(d)), index_(std::move(index)), cache_(std::move(cache)) {}
  const EngineDescriptor& descriptor() const override { return d_; }
  std::vector<RecommendationItem> recommend(const EngineRequest& r) override {
    static const ClickCounts kNone;
    if (!cache_) return recommend_most_popular(*index_, kNone, r.max_items);
    const auto counts = cache_->snapshot();
    return recommend_most_popular(*index_, *counts, r.max_items);
  }

 private:
  EngineDescriptor d_;
  std::shared_ptr<const Index> index_;
  std::shared_ptr<PopularityCache> cache_;
};

class StereotypeEngine final : public Engine {
 public:
  StereotypeEngine(EngineDescriptor d, std::shared_ptr<const Index> index, std::shared_ptr<const StereotypeList> list)
      : d_(std::move(d)), index_(std::move(index)), list_(std::move(list)) {}
  const EngineDescriptor& descriptor() const override { return d_; }
  std::vector<RecommendationItem> recommend(const EngineRequest& r) override {
    static const StereotypeList kEmpty;
    return recommend_stereotype(*index_, list_ ? *list_ : kEmpty, r.max_items);
  }

 private:
  EngineDescriptor d_;
  std::shared_ptr<const Index> index_;
  std::shared_ptr<const StereotypeList> list_;
};

class ExternalEngine final : public Engine {
 public:
  explicit ExternalEngine(EngineDescriptor d) : d_(std::move(d)) {}
  const EngineDescriptor& descriptor() const override { return d_; }
  std::vector<RecommendationItem> recommend(const EngineRequest& r) override {
    return fetch_external(d_, r.raw_title, r.max_items,
                          std::chrono::milliseconds(d_.deadline_ms.value_or(kDefaultDeadlineMs)), r.request_id);
  }

 private:
  EngineDescriptor d_;
};

}  // namespace

std::unique_ptr<Engine> make_engine(const EngineDescriptor& descriptor, const EngineResources& resources) {
  auto d = validated(descriptor);
  if (is_internal(d.kind) && !resources.index) {
    throw ValidationError("ValidationError", "engine_id", "internal engine '" + d.engine_id + "' needs a corpus index");
  }
  switch (d.kind) {
    case EngineKind::internal_cbf: return std::make_unique<CbfEngine>(std::move(d), resources.index);
    case EngineKind::internal_most_popular:
      return std::make_unique<MostPopularEngine>(std::move(d), resources.index, resources.popularity);
    case EngineKind::internal_stereotype:
      return std::make_unique<StereotypeEngine>(std::move(d), resources.index, resources.stereotypes);
    case EngineKind::external: return std::make_unique<ExternalEngine>(std::move(d));
  }
  throw ValidationError("ValidationError", "kind", "unknown engine kind");
}

}  // namespace reclab
