#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "reclab/corpus_index.hpp"
#include "reclab/domain.hpp"
#include "reclab/errors.hpp"
#include "reclab/time.hpp"

namespace reclab {

inline constexpr int kDefaultDeadlineMs = 2000;

enum class EngineKind { internal_cbf, internal_most_popular, internal_stereotype, external };

std::string_view to_string(EngineKind kind);
// Throws ValidationError("ValidationError", "kind").
EngineKind parse_engine_kind(std::string_view text);
inline bool is_internal(EngineKind kind) { return kind != EngineKind::external; }

struct EngineDescriptor {
  std::string engine_id;
  EngineKind kind = EngineKind::internal_cbf;
  std::optional<std::string> endpoint_url;  // external only
  std::optional<int> deadline_ms;           // external only

  bool operator==(const EngineDescriptor&) const = default;
};

// Throws ValidationError("ValidationError", field). External descriptors
// without a deadline get kDefaultDeadlineMs.
EngineDescriptor validated(EngineDescriptor descriptor);
EngineDescriptor descriptor_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EngineDescriptor& descriptor);

// Engine failures. Codes: DeadlineExceeded, TransportError, InvalidPayload,
// EmptyQuery, StereotypeUnconfigured.
class EngineError : public Error {
 public:
  using Error::Error;
};

using ClickCounts = std::unordered_map<std::string, std::int64_t>;

// Top-k by TF-IDF cosine against the normalized query title. Documents whose
// normalized title equals the query and documents scoring 0 are left out.
// Throws EngineError("EmptyQuery") when the query has no indexable terms.
std::vector<RecommendationItem> recommend_cbf(const Index& index, std::string_view raw_title, int k);

// Top-k corpus documents by click count, ties by ascending doc_id.
std::vector<RecommendationItem> recommend_most_popular(const Index& index, const ClickCounts& counts, int k);

// Configured list of corpus documents; checked against the corpus on construction.
class StereotypeList {
 public:
  StereotypeList() = default;
  // Throws ValidationError for unknown or repeated ids.
  StereotypeList(const Index& index, std::vector<std::string> doc_ids);

  std::span<const std::string> doc_ids() const { return doc_ids_; }
  bool empty() const { return doc_ids_.empty(); }

 private:
  std::vector<std::string> doc_ids_;
};

// First min(k, size) entries. Throws EngineError("StereotypeUnconfigured").
std::vector<RecommendationItem> recommend_stereotype(const Index& index, const StereotypeList& list, int k);

// One POST to a research-partner endpoint, bounded end to end by deadline.
// Never retries. Returns at most k validated items numbered 1..n.
std::vector<RecommendationItem> fetch_external(const EngineDescriptor& descriptor,
                                               std::string_view query_title, int k,
                                               std::chrono::milliseconds deadline,
                                               std::string_view request_id = {});

// Parses a partner response body. Throws EngineError("InvalidPayload").
std::vector<RecommendationItem> parse_external_payload(std::string_view body, int k);

// Click-count snapshot for the most-popular engine. The snapshot is replaced
// at most once per refresh interval, measured on the supplied clock; between
// refreshes readers share one immutable map.
class PopularityCache {
 public:
  using Source = std::function<ClickCounts(Timestamp as_of)>;

  PopularityCache(Source source, const Clock& clock, std::chrono::milliseconds refresh_interval);

  std::shared_ptr<const ClickCounts> snapshot();

 private:
  Source source_;
  const Clock& clock_;
  std::chrono::milliseconds interval_;
  std::mutex mutex_;
  std::shared_ptr<const ClickCounts> current_;
  std::optional<Timestamp> loaded_at_;
};

struct EngineRequest {
  std::string request_id;
  std::string raw_title;
  int max_items = kDefaultMaxCount;
};

class Engine {
 public:
  virtual ~Engine() = default;
  virtual const EngineDescriptor& descriptor() const = 0;
  // Throws EngineError on failure. May return an empty list.
  virtual std::vector<RecommendationItem> recommend(const EngineRequest& request) = 0;
};

// Shared, read-only inputs for internal engines.
struct EngineResources {
  std::shared_ptr<const Index> index;
  std::shared_ptr<PopularityCache> popularity;
  std::shared_ptr<const StereotypeList> stereotypes;
};

std::unique_ptr<Engine> make_engine(const EngineDescriptor& descriptor, const EngineResources& resources);

}  // namespace reclab
