#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reclab/random.hpp"
#include "reclab/time.hpp"

namespace reclab {

inline constexpr int kDefaultMaxCount = 6;
inline constexpr int kMaxCountCap = 50;

struct Document {
  std::string doc_id;
  std::string title;
  std::optional<std::string> abstract;
  std::string url;

  bool operator==(const Document&) const = default;
};

struct Query {
  std::string partner_id;
  std::string raw_title;
  int max_count = kDefaultMaxCount;
};

struct RecommendationItem {
  int position = 0;
  std::string title;
  std::string target_url;
  std::optional<double> score;
  std::optional<std::string> origin_doc_id;

  bool operator==(const RecommendationItem&) const = default;
};

struct ImpressionRecord {
  std::string set_id;
  std::string partner_id;
  std::string assigned_engine;
  std::string serving_engine;
  bool fallback_occurred = false;
  std::vector<RecommendationItem> items;
  Timestamp requested_at{};
  std::int64_t latency_ms = 0;

  bool operator==(const ImpressionRecord&) const = default;
};

struct ClickEvent {
  std::string set_id;
  int position = 0;
  Timestamp clicked_at{};
  bool is_duplicate = false;

  bool operator==(const ClickEvent&) const = default;
};

// Lowercase (ASCII), collapse whitespace runs to one space, trim.
// Throws ValidationError("EmptyTitle") when nothing remains.
std::string normalize_title(std::string_view raw);

bool is_http_url(std::string_view url);

// Throws ValidationError("InvalidItem", field) naming "title" or "url".
void validate_item(const RecommendationItem& item);

// Throws ValidationError("InvalidDocument", field).
void validate_document(const Document& doc);

// Throws ValidationError("InvalidQuery", field); returns the normalized title.
std::string validate_query(const Query& query);

// Positions are 1..n, contiguous and in order.
bool has_contiguous_positions(std::span<const RecommendationItem> items);

// Rewrites positions to 1..n in list order.
void renumber(std::vector<RecommendationItem>& items);

// Throws ValidationError("InvalidImpression", field).
void validate_impression(const ImpressionRecord& record);

// Opaque set identifiers in UUIDv4 form (122 random bits). Seeded generators
// replay the same sequence; the default constructor seeds from the OS.
// Safe under concurrent use.
class SetIdGenerator {
 public:
  SetIdGenerator();
  explicit SetIdGenerator(std::uint64_t seed);

  std::string next();

 private:
  SharedRng rng_;
};

}  // namespace reclab
