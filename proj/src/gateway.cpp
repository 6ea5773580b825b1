#include "reclab/gateway.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

namespace reclab {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c;
  return out;
}

bool equal_secret(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  if (auto q = path.find('?'); q != std::string_view::npos) path = path.substr(0, q);
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto end = path.find('/', start);
    const auto part = path.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    if (!part.empty()) parts.push_back(part);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return parts;
}

std::optional<int> parse_position(std::string_view text) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

HttpResponse json_response(int status, const ojson& body) {
  HttpResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

HttpResponse error_response(int status, std::string_view code, std::string_view message, std::string_view field = {}) {
  ojson body;
  body["error"] = code;
  body["message"] = message;
  if (!field.empty()) body["field"] = field;
  return json_response(status, body);
}

json parse_body(const HttpRequest& request) {
  try {
    return json::parse(request.body);
  } catch (const json::exception& e) {
    throw HttpError(400, "MalformedBody", std::string("request body is not JSON: ") + e.what());
  }
}

}  // namespace

PartnerRegistration partner_from_json(const json& j) {
  auto str = [&](const char* field, bool required) -> std::string {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
      if (required) throw ValidationError("ValidationError", field, std::string("missing field '") + field + "'");
      return {};
    }
    if (!it->is_string()) throw ValidationError("ValidationError", field, std::string("'") + field + "' must be a string");
    return it->get<std::string>();
  };
  if (!j.is_object()) throw ValidationError("ValidationError", "body", "partner must be an object");
  PartnerRegistration p{str("partner_id", true), str("api_key", true), str("display_name", false)};
  if (p.partner_id.empty()) throw ValidationError("ValidationError", "partner_id", "partner_id is empty");
  if (p.api_key.empty()) throw ValidationError("ValidationError", "api_key", "api_key is empty");
  return p;
}

GatewayConfig gateway_config_from_json(const json& j) {
  GatewayConfig c;
  try {
    if (auto it = j.find("listen"); it != j.end()) {
      const auto listen = it->get<std::string>();
      const auto colon = listen.rfind(':');
      if (colon == std::string::npos) throw ValidationError("ValidationError", "listen", "listen must be host:port");
      c.listen_host = listen.substr(0, colon);
      c.listen_port = std::stoi(listen.substr(colon + 1));
    }
    c.admin_key = j.value("admin_key", std::string{});
    if (j.contains("corpus_path")) c.corpus_path = j["corpus_path"].get<std::string>();
    if (j.contains("index_path")) c.index_path = j["index_path"].get<std::string>();
    c.stereotype = j.value("stereotype", std::vector<std::string>{});
    if (j.contains("event_store_path")) c.event_store_path = j["event_store_path"].get<std::string>();
    c.fsync = j.value("fsync", true);
    c.popularity_refresh = std::chrono::milliseconds(j.value("popularity_refresh_ms", 60'000));
    c.public_base_url = j.value("public_base_url", std::string{});
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    for (const auto& e : j.value("engines", json::array())) c.engines.push_back(descriptor_from_json(e));
    for (const auto& p : j.value("partners", json::array())) c.partners.push_back(partner_from_json(p));
    for (const auto& a : j.value("allocations", json::array())) {
      c.allocations.push_back(allocation_from_json(a, a.at("partner_id").get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw Error("ConfigInvalid", std::string("gateway config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error("ConfigInvalid", "gateway config: listen port is not a number");
  }
  if (c.admin_key.empty()) throw Error("ConfigInvalid", "gateway config: admin_key is required");
  if (!c.corpus_path && !c.index_path) throw Error("ConfigInvalid", "gateway config: corpus_path or index_path is required");
  return c;
}

GatewayConfig load_gateway_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot open config '" + path + "'");
  try {
    return gateway_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("ConfigInvalid", "config '" + path + "' is not JSON: " + e.what());
  }
}

std::string HttpRequest::header(std::string_view name) const {
  auto it = headers.find(lower(name));
  return it == headers.end() ? std::string{} : it->second;
}

ojson to_json(const RecommendationResponse& response) {
  ojson j;
  j["set_id"] = response.set_id;
  ojson items = ojson::array();
  for (const auto& item : response.items) {
    ojson i;
    i["position"] = item.position;
    i["title"] = item.title;
    i["click_url"] = item.click_url;
    items.push_back(std::move(i));
  }
  j["items"] = std::move(items);
  j["processing_time_ms"] = response.processing_time_ms;
  return j;
}

Gateway::Gateway(std::shared_ptr<const Index> index, StereotypeList stereotypes, std::shared_ptr<EventStore> store,
                 const Clock& clock, GatewayOptions options)
    : index_(std::move(index)),
      store_(std::move(store)),
      clock_(clock),
      options_(std::move(options)),
      set_ids_(options_.seed ? SetIdGenerator(derive_seed(*options_.seed, 0)) : SetIdGenerator()),
      router_rng_(options_.seed ? derive_seed(*options_.seed, 1) : random_seed()),
      registry_(std::make_shared<const Registry>()) {
  resources_.index = index_;
  resources_.stereotypes = std::make_shared<const StereotypeList>(std::move(stereotypes));
  auto* store_ptr = store_.get();
  resources_.popularity = std::make_shared<PopularityCache>(
      [store_ptr](Timestamp as_of) { return store_ptr->click_counts(as_of); }, clock_, options_.popularity_refresh);
}

std::unique_ptr<Gateway> Gateway::from_config(const GatewayConfig& config, const Clock& clock) {
  std::shared_ptr<const Index> index;
  if (config.index_path) {
    std::ifstream in(*config.index_path);
    if (!in) throw Error("IoError", "cannot open index '" + *config.index_path + "'");
    index = std::make_shared<const Index>(Index::load(in));
  } else {
    const auto docs = read_corpus_file(*config.corpus_path);
    index = std::make_shared<const Index>(Index::build(docs));
  }
  StereotypeList stereotypes(*index, config.stereotype);
  std::shared_ptr<EventStore> store = config.event_store_path
                                          ? EventStore::open_file(*config.event_store_path, config.fsync)
                                          : EventStore::in_memory();
  GatewayOptions options;
  options.admin_key = config.admin_key;
  options.public_base_url = config.public_base_url;
  options.seed = config.seed;
  options.popularity_refresh = config.popularity_refresh;
  auto gateway = std::make_unique<Gateway>(std::move(index), std::move(stereotypes), std::move(store), clock, options);
  for (const auto& e : config.engines) gateway->register_engine(e);
  for (const auto& p : config.partners) gateway->register_partner(p);
  for (const auto& a : config.allocations) gateway->put_allocation(a);
  return gateway;
}

std::shared_ptr<const Gateway::Registry> Gateway::registry() const {
  std::lock_guard lock(registry_mutex_);
  return registry_;
}

std::vector<std::string> Gateway::engine_ids() const { return registry()->engine_order; }

std::optional<AllocationConfig> Gateway::allocation(std::string_view partner_id) const {
  auto reg = registry();
  auto it = reg->allocations.find(partner_id);
  if (it == reg->allocations.end()) return std::nullopt;
  return it->second;
}

void Gateway::register_engine(const EngineDescriptor& descriptor) {
  auto engine = std::shared_ptr<Engine>(make_engine(descriptor, resources_));
  std::lock_guard admin(admin_mutex_);
  auto next = std::make_shared<Registry>(*registry());
  const auto& id = engine->descriptor().engine_id;
  if (next->engines.contains(id)) throw ConflictError("DuplicateId", "engine '" + id + "' is already registered");
  next->engine_order.push_back(id);
  next->engines.emplace(id, std::move(engine));
  std::lock_guard lock(registry_mutex_);
  registry_ = std::move(next);
}

void Gateway::register_partner(const PartnerRegistration& partner) {
  if (partner.partner_id.empty()) throw ValidationError("ValidationError", "partner_id", "partner_id is empty");
  if (partner.api_key.empty()) throw ValidationError("ValidationError", "api_key", "api_key is empty");
  std::lock_guard admin(admin_mutex_);
  auto next = std::make_shared<Registry>(*registry());
  if (next->partners.contains(partner.partner_id)) {
    throw ConflictError("DuplicateId", "partner '" + partner.partner_id + "' is already registered");
  }
  next->partners.emplace(partner.partner_id, partner);
  std::lock_guard lock(registry_mutex_);
  registry_ = std::move(next);
}

std::vector<std::string> Gateway::default_fallback(const Registry& registry) const {
  std::vector<std::string> order;
  for (auto kind : {EngineKind::internal_cbf, EngineKind::internal_most_popular}) {
    for (const auto& id : registry.engine_order) {
      if (registry.engines.at(id)->descriptor().kind == kind) {
        order.push_back(id);
        break;
      }
    }
  }
  return order;
}

void Gateway::put_allocation(AllocationConfig config) {
  std::lock_guard admin(admin_mutex_);
  auto next = std::make_shared<Registry>(*registry());
  if (!next->partners.contains(config.partner_id)) {
    throw ValidationError("ValidationError", "partner_id", "partner '" + config.partner_id + "' is not registered");
  }
  if (config.fallback_order.empty()) config.fallback_order = default_fallback(*next);
  const EngineCatalog catalog{
      [&](const std::string& id) { return next->engines.contains(id); },
      [&](const std::string& id) { return is_internal(next->engines.at(id)->descriptor().kind); }};
  validate_allocation(config, catalog);
  next->allocations.insert_or_assign(config.partner_id, std::move(config));
  std::lock_guard lock(registry_mutex_);
  registry_ = std::move(next);
}

RecommendationResponse Gateway::handle_recommend(std::string_view partner_id, std::string_view api_key,
                                                 std::string_view raw_title, std::optional<int> max_count) {
  const auto wall_start = std::chrono::steady_clock::now();
  const auto requested_at = clock_.now();
  const auto reg = registry();

  auto partner = reg->partners.find(partner_id);
  if (partner == reg->partners.end() || !equal_secret(partner->second.api_key, api_key)) {
    throw HttpError(401, "Unauthorized", "unknown partner or bad api key");
  }
  Query query{std::string(partner_id), std::string(raw_title), max_count.value_or(kDefaultMaxCount)};
  try {
    validate_query(query);
  } catch (const ValidationError& e) {
    throw HttpError(400, e.code(), e.what(), e.field());
  }
  auto alloc = reg->allocations.find(partner_id);
  if (alloc == reg->allocations.end()) {
    throw HttpError(503, "NoAllocation", "no allocation configured for partner '" + std::string(partner_id) + "'");
  }
  const auto& config = alloc->second;

  const std::string assigned = assign(config, router_rng_);
  std::set<std::string> failed;
  std::string serving = assigned;
  std::vector<RecommendationItem> items;
  const auto set_id = set_ids_.next();
  while (true) {
    auto engine = reg->engines.find(serving);
    if (engine != reg->engines.end()) {
      try {
        items = engine->second->recommend(EngineRequest{set_id, query.raw_title, query.max_count});
      } catch (const Error&) {
        items.clear();
      }
    }
    if (!items.empty()) break;
    failed.insert(serving);
    auto next = next_fallback(config, failed);
    if (!next) break;
    serving = *next;
  }

  auto elapsed_ms = [&] {
    if (options_.latency == LatencySource::clock) {
      return std::max<std::int64_t>(0, (clock_.now() - requested_at).count());
    }
    return std::int64_t(std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - wall_start)
                            .count());
  };

  RecommendationResponse response;
  if (items.empty()) {
    response.processing_time_ms = elapsed_ms();
    return response;
  }

  ImpressionRecord record;
  record.set_id = set_id;
  record.partner_id = query.partner_id;
  record.assigned_engine = assigned;
  record.serving_engine = serving;
  record.fallback_occurred = serving != assigned;
  record.items = std::move(items);
  record.requested_at = requested_at;
  record.latency_ms = elapsed_ms();
  try {
    store_->append_impression(record);
  } catch (const StorageError& e) {
    throw HttpError(503, "StorageUnavailable", e.what());
  }

  response.set_id = set_id;
  for (const auto& item : record.items) {
    response.items.push_back(ResponseItem{item.position, item.title,
                                          options_.public_base_url + "/v1/click/" + set_id + "/" +
                                              std::to_string(item.position)});
  }
  response.processing_time_ms = record.latency_ms;
  return response;
}

std::string Gateway::handle_click(std::string_view set_id, int position) {
  try {
    store_->append_click(set_id, position, clock_.now());
  } catch (const NotFoundError& e) {
    throw HttpError(404, "UnknownClickTarget", e.what());
  } catch (const StorageError& e) {
    throw HttpError(503, "StorageUnavailable", e.what());
  }
  auto url = store_->target_url(set_id, position);
  if (!url) throw HttpError(404, "UnknownClickTarget", "unknown click target");
  return *url;
}

void Gateway::require_admin(const HttpRequest& request) const {
  if (options_.admin_key.empty() || !equal_secret(request.header("X-Admin-Key"), options_.admin_key)) {
    throw HttpError(401, "Unauthorized", "bad admin key");
  }
}

HttpResponse Gateway::dispatch(const HttpRequest& request) {
  try {
    return route(request);
  } catch (const HttpError& e) {
    return error_response(e.status(), e.code(), e.what(), e.field());
  } catch (const ValidationError& e) {
    return error_response(400, e.code(), e.what(), e.field());
  } catch (const ConflictError& e) {
    return error_response(409, e.code(), e.what());
  } catch (const NotFoundError& e) {
    return error_response(404, e.code(), e.what());
  } catch (const StorageError& e) {
    return error_response(503, e.code(), e.what());
  } catch (const std::exception& e) {
    return error_response(500, "InternalError", e.what());
  }
}

HttpResponse Gateway::route(const HttpRequest& request) {
  const auto parts = split_path(request.path);
  const auto& method = request.method;
  auto is = [&](std::initializer_list<std::string_view> expected) {
    return parts.size() == expected.size() && std::equal(parts.begin(), parts.end(), expected.begin(),
                                                         [](auto a, auto b) { return b == "*" || a == b; });
  };

  if (method == "POST" && is({"v1", "recommendations"})) {
    const auto body = parse_body(request);
    if (!body.is_object()) throw HttpError(400, "MalformedBody", "body must be an object");
    auto title = body.find("title");
    if (title == body.end() || !title->is_string()) throw HttpError(400, "EmptyTitle", "title is required", "title");
    std::optional<int> max_count;
    if (auto mc = body.find("max_count"); mc != body.end() && !mc->is_null()) {
      if (!mc->is_number_integer()) throw HttpError(400, "InvalidQuery", "max_count must be an integer", "max_count");
      max_count = mc->get<int>();
    }
    const auto response = handle_recommend(request.header("X-Partner-Id"), request.header("X-Api-Key"),
                                           title->get<std::string>(), max_count);
    return json_response(200, to_json(response));
  }
  if (method == "GET" && is({"v1", "click", "*", "*"})) {
    const auto position = parse_position(parts[3]);
    if (!position) throw HttpError(404, "UnknownClickTarget", "position is not a number");
    HttpResponse r;
    r.status = 302;
    r.headers["Location"] = handle_click(parts[2], *position);
    r.content_type = "text/plain";
    return r;
  }
  if (method == "POST" && is({"v1", "click"})) {
    const auto body = parse_body(request);
    if (!body.is_object() || !body.contains("set_id") || !body["set_id"].is_string() || !body.contains("position") ||
        !body["position"].is_number_integer()) {
      throw HttpError(400, "MalformedBody", "expected {\"set_id\": string, \"position\": int}");
    }
    handle_click(body["set_id"].get<std::string>(), body["position"].get<int>());
    HttpResponse r;
    r.status = 204;
    r.content_type = "text/plain";
    return r;
  }
  if (method == "GET" && is({"v1", "health"})) {
    ojson body;
    body["status"] = "ok";
    body["corpus_docs"] = index_->doc_count();
    body["engines"] = engine_ids();
    return json_response(200, body);
  }
  if (method == "POST" && is({"v1", "admin", "engines"})) {
    require_admin(request);
    register_engine(descriptor_from_json(parse_body(request)));
    return json_response(201, ojson{{"status", "ok"}});
  }
  if (method == "POST" && is({"v1", "admin", "partners"})) {
    require_admin(request);
    register_partner(partner_from_json(parse_body(request)));
    return json_response(201, ojson{{"status", "ok"}});
  }
  if (method == "PUT" && is({"v1", "admin", "allocations", "*"})) {
    require_admin(request);
    put_allocation(allocation_from_json(parse_body(request), std::string(parts[3])));
    return json_response(200, ojson{{"status", "ok"}});
  }
  return error_response(404, "NotFound", "no route for " + method + " " + request.path);
}

}  // namespace reclab
