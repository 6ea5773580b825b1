#pragma once

#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "reclab/random.hpp"

namespace reclab {

struct AllocationEntry {
  std::string engine_id;
  double weight = 0.0;

  bool operator==(const AllocationEntry&) const = default;
};

// Per-partner routing policy: request-level weighted draw over engines, plus
// the ordered internal engines tried when the drawn engine fails.
struct AllocationConfig {
  std::string partner_id;
  std::vector<AllocationEntry> entries;
  std::vector<std::string> fallback_order;

  bool operator==(const AllocationConfig&) const = default;
};

// What the router needs to know about registered engines.
struct EngineCatalog {
  std::function<bool(const std::string&)> exists;
  std::function<bool(const std::string&)> is_internal;
};

// Checks every AllocationConfig invariant. Throws ValidationError
// ("ValidationError", field) with field one of weight, entries, engine_id,
// fallback_order.
void validate_allocation(const AllocationConfig& config, const EngineCatalog& catalog);

AllocationConfig allocation_from_json(const nlohmann::json& j, std::string partner_id);
nlohmann::json to_json(const AllocationConfig& config);

// Draws engine i with probability weight_i / sum(weights). Stateless per call;
// entries with weight 0 are never chosen.
const std::string& assign(const AllocationConfig& config, Rng& rng);
const std::string& assign(const AllocationConfig& config, SharedRng& rng);

// First fallback engine not yet tried, or nullopt once all have failed.
std::optional<std::string> next_fallback(const AllocationConfig& config, const std::set<std::string>& failed);

}  // namespace reclab
