#include "reclab/domain.hpp"

#include <cstdio>

#include "reclab/errors.hpp"

namespace reclab {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char to_lower(char c) { return (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c; }

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (to_lower(s[i]) != prefix[i]) return false;
  }
  return true;
}

bool blank(std::string_view s) {
  for (char c : s) {
    if (!is_space(c)) return false;
  }
  return true;
}

}  // namespace

std::string normalize_title(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(to_lower(c));
  }
  if (out.empty()) throw ValidationError("EmptyTitle", "title", "title is empty after normalization");
  return out;
}

bool is_http_url(std::string_view url) {
  std::string_view rest;
  if (starts_with_ci(url, "https://")) {
    rest = url.substr(8);
  } else if (starts_with_ci(url, "http://")) {
    rest = url.substr(7);
  } else {
    return false;
  }
  const auto host = rest.substr(0, rest.find_first_of("/?#"));
  if (host.empty()) return false;
  for (char c : url) {
    if (is_space(c) || static_cast<unsigned char>(c) < 0x20) return false;
  }
  return true;
}

void validate_item(const RecommendationItem& item) {
  if (blank(item.title)) throw ValidationError("InvalidItem", "title", "item title is empty");
  if (!is_http_url(item.target_url)) {
    throw ValidationError("InvalidItem", "url", "item url is not an absolute http(s) url: '" + item.target_url + "'");
  }
}

void validate_document(const Document& doc) {
  if (doc.doc_id.empty()) throw ValidationError("InvalidDocument", "doc_id", "doc_id is empty");
  if (blank(doc.title)) {
    throw ValidationError("InvalidDocument", "title", "document " + doc.doc_id + " has an empty title");
  }
  if (!is_http_url(doc.url)) {
    throw ValidationError("InvalidDocument", "url", "document " + doc.doc_id + " has an invalid url");
  }
}

std::string validate_query(const Query& query) {
  if (query.max_count < 1 || query.max_count > kMaxCountCap) {
    throw ValidationError("InvalidQuery", "max_count",
                          "max_count must be in [1, " + std::to_string(kMaxCountCap) + "]");
  }
  return normalize_title(query.raw_title);
}

bool has_contiguous_positions(std::span<const RecommendationItem> items) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].position != int(i) + 1) return false;
  }
  return true;
}

void renumber(std::vector<RecommendationItem>& items) {
  for (std::size_t i = 0; i < items.size(); ++i) items[i].position = int(i) + 1;
}

void validate_impression(const ImpressionRecord& record) {
  auto fail = [](const char* field, const std::string& msg) {
    throw ValidationError("InvalidImpression", field, msg);
  };
  if (record.set_id.empty()) fail("set_id", "set_id is empty");
  if (record.items.empty()) fail("items", "impression has no items");
  if (!has_contiguous_positions(record.items)) fail("items", "positions are not 1..n");
  if (record.latency_ms < 0) fail("latency_ms", "negative latency");
  if (record.assigned_engine.empty()) fail("assigned_engine", "assigned_engine is empty");
  if (record.serving_engine.empty()) fail("serving_engine", "serving_engine is empty");
  if (!record.fallback_occurred && record.serving_engine != record.assigned_engine) {
    fail("serving_engine", "serving_engine differs from assigned_engine without fallback");
  }
  for (const auto& item : record.items) validate_item(item);
}

SetIdGenerator::SetIdGenerator() : rng_(random_seed()) {}

SetIdGenerator::SetIdGenerator(std::uint64_t seed) : rng_(seed) {}

std::string SetIdGenerator::next() {
  auto [hi, lo] = rng_.with([](Rng& r) { return std::pair{r.next_u64(), r.next_u64()}; });
  hi = (hi & 0xFFFFFFFFFFFF0FFFull) | 0x0000000000004000ull;  // version 4
  lo = (lo & 0x3FFFFFFFFFFFFFFFull) | 0x8000000000000000ull;  // RFC 4122 variant
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%08x-%04x-%04x-%04x-%012llx", unsigned(hi >> 32),
                unsigned((hi >> 16) & 0xFFFF), unsigned(hi & 0xFFFF), unsigned(lo >> 48),
                static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFull));
  return buf;
}

}  // namespace reclab
