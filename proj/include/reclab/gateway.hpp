#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "reclab/ab_router.hpp"
#include "reclab/corpus_index.hpp"
#include "reclab/domain.hpp"
#include "reclab/engines.hpp"
#include "reclab/event_store.hpp"
#include "reclab/time.hpp"

namespace reclab {

struct PartnerRegistration {
  std::string partner_id;
  std::string api_key;
  std::string display_name;

  bool operator==(const PartnerRegistration&) const = default;
};

// Throws ValidationError("ValidationError", field).
PartnerRegistration partner_from_json(const nlohmann::json& j);

struct GatewayConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::string admin_key;
  std::optional<std::string> corpus_path;  // JSONL corpus, or
  std::optional<std::string> index_path;   // a snapshot written by `reclab ingest`
  std::vector<std::string> stereotype;
  std::optional<std::string> event_store_path;  // unset: in-memory store
  bool fsync = true;
  std::chrono::milliseconds popularity_refresh{60'000};
  std::string public_base_url;  // prefix for click URLs; empty keeps them relative
  std::optional<std::uint64_t> seed;
  std::vector<EngineDescriptor> engines;
  std::vector<PartnerRegistration> partners;
  std::vector<AllocationConfig> allocations;
};

GatewayConfig gateway_config_from_json(const nlohmann::json& j);
GatewayConfig load_gateway_config(const std::string& path);

// Transport-neutral request/response. The HTTP server and the simulation
// harness both go through Gateway::dispatch.
struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> headers;  // lowercase names
  std::string body;

  std::string header(std::string_view name) const;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

// Failure carrying an HTTP status and stable error code.
class HttpError : public Error {
 public:
  HttpError(int status, std::string code, const std::string& message, std::string field = {})
      : Error(std::move(code), message), status_(status), field_(std::move(field)) {}
  int status() const noexcept { return status_; }
  const std::string& field() const noexcept { return field_; }

 private:
  int status_;
  std::string field_;
};

struct ResponseItem {
  int position = 0;
  std::string title;
  std::string click_url;
};

struct RecommendationResponse {
  std::string set_id;  // empty when nothing could be delivered
  std::vector<ResponseItem> items;
  std::int64_t processing_time_ms = 0;
};

nlohmann::ordered_json to_json(const RecommendationResponse& response);

enum class LatencySource {
  wall,   // steady clock around the request
  clock,  // difference of the gateway clock; a manual clock makes it reproducible
};

struct GatewayOptions {
  std::string admin_key;
  std::string public_base_url;
  std::optional<std::uint64_t> seed;
  std::chrono::milliseconds popularity_refresh{60'000};
  LatencySource latency = LatencySource::wall;
};

// Routes partner requests to engines, persists impressions and clicks, and
// serves the admin surface. All methods are safe to call concurrently;
// registry updates replace an immutable snapshot, so a request sees either
// the old or the new configuration.
class Gateway {
 public:
  Gateway(std::shared_ptr<const Index> index, StereotypeList stereotypes, std::shared_ptr<EventStore> store,
          const Clock& clock, GatewayOptions options);

  // Builds index, store and registry from a config file's contents.
  static std::unique_ptr<Gateway> from_config(const GatewayConfig& config, const Clock& clock);

  RecommendationResponse handle_recommend(std::string_view partner_id, std::string_view api_key,
                                          std::string_view raw_title, std::optional<int> max_count);
  // Returns the target URL. Throws HttpError 404 for unknown items.
  std::string handle_click(std::string_view set_id, int position);

  // Throw ValidationError or ConflictError("DuplicateId").
  void register_engine(const EngineDescriptor& descriptor);
  void register_partner(const PartnerRegistration& partner);
  void put_allocation(AllocationConfig config);

  HttpResponse dispatch(const HttpRequest& request);

  const Index& index() const { return *index_; }
  EventStore& store() { return *store_; }
  std::vector<std::string> engine_ids() const;
  std::optional<AllocationConfig> allocation(std::string_view partner_id) const;

 private:
  struct Registry {
    std::vector<std::string> engine_order;
    std::map<std::string, std::shared_ptr<Engine>, std::less<>> engines;
    std::map<std::string, PartnerRegistration, std::less<>> partners;
    std::map<std::string, AllocationConfig, std::less<>> allocations;
  };

  std::shared_ptr<const Registry> registry() const;
  void require_admin(const HttpRequest& request) const;
  std::vector<std::string> default_fallback(const Registry& registry) const;
  HttpResponse route(const HttpRequest& request);

  std::shared_ptr<const Index> index_;
  std::shared_ptr<EventStore> store_;
  const Clock& clock_;
  GatewayOptions options_;
  EngineResources resources_;
  SetIdGenerator set_ids_;
  SharedRng router_rng_;

  mutable std::mutex registry_mutex_;  // guards the pointer swap
  std::mutex admin_mutex_;             // serializes read-modify-write of the registry
  std::shared_ptr<const Registry> registry_;
};

}  // namespace reclab
