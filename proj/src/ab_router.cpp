#include "reclab/ab_router.hpp"

#include <cmath>
#include <unordered_set>

#include "reclab/errors.hpp"

namespace reclab {

using nlohmann::json;

void validate_allocation(const AllocationConfig& config, const EngineCatalog& catalog) {
  if (config.partner_id.empty()) throw ValidationError("ValidationError", "partner_id", "partner_id is empty");
  if (config.entries.empty()) throw ValidationError("ValidationError", "entries", "allocation has no entries");
  bool any_positive = false;
  std::unordered_set<std::string> seen;
  for (const auto& e : config.entries) {
    if (!std::isfinite(e.weight) || e.weight < 0.0) {
      throw ValidationError("ValidationError", "weight", "weight of '" + e.engine_id + "' must be a finite value >= 0");
    }
    if (!catalog.exists(e.engine_id)) {
      throw ValidationError("ValidationError", "engine_id", "engine '" + e.engine_id + "' is not registered");
    }
    if (!seen.insert(e.engine_id).second) {
      throw ValidationError("ValidationError", "engine_id", "engine '" + e.engine_id + "' is listed twice");
    }
    any_positive = any_positive || e.weight > 0.0;
  }
  if (!any_positive) throw ValidationError("ValidationError", "weight", "at least one weight must be positive");
  for (const auto& id : config.fallback_order) {
    if (!catalog.exists(id)) {
      throw ValidationError("ValidationError", "fallback_order", "engine '" + id + "' is not registered");
    }
    if (!catalog.is_internal(id)) {
      throw ValidationError("ValidationError", "fallback_order", "fallback engine '" + id + "' is not internal");
    }
  }
}

AllocationConfig allocation_from_json(const json& j, std::string partner_id) {
  if (!j.is_object()) throw ValidationError("ValidationError", "body", "allocation must be an object");
  AllocationConfig config;
  config.partner_id = std::move(partner_id);
  auto entries = j.find("entries");
  if (entries == j.end() || !entries->is_array()) {
    throw ValidationError("ValidationError", "entries", "entries must be an array");
  }
  for (const auto& e : *entries) {
    if (!e.is_object() || !e.contains("engine_id") || !e["engine_id"].is_string()) {
      throw ValidationError("ValidationError", "engine_id", "entry needs a string engine_id");
    }
    if (!e.contains("weight") || !e["weight"].is_number()) {
      throw ValidationError("ValidationError", "weight", "entry needs a numeric weight");
    }
    config.entries.push_back({e["engine_id"].get<std::string>(), e["weight"].get<double>()});
  }
  if (auto f = j.find("fallback_order"); f != j.end() && !f->is_null()) {
    if (!f->is_array()) throw ValidationError("ValidationError", "fallback_order", "fallback_order must be an array");
    for (const auto& id : *f) {
      if (!id.is_string()) throw ValidationError("ValidationError", "fallback_order", "engine ids must be strings");
      config.fallback_order.push_back(id.get<std::string>());
    }
  }
  return config;
}

json to_json(const AllocationConfig& config) {
  json entries = json::array();
  for (const auto& e : config.entries) entries.push_back({{"engine_id", e.engine_id}, {"weight", e.weight}});
  return {{"partner_id", config.partner_id}, {"entries", entries}, {"fallback_order", config.fallback_order}};
}

const std::string& assign(const AllocationConfig& config, Rng& rng) {
  double total = 0.0;
  for (const auto& e : config.entries) total += e.weight;
  const double target = rng.uniform01() * total;
  double cumulative = 0.0;
  const AllocationEntry* last_positive = nullptr;
  for (const auto& e : config.entries) {
    if (e.weight <= 0.0) continue;
    cumulative += e.weight;
    last_positive = &e;
    if (target < cumulative) return e.engine_id;
  }
  // Rounding can leave target == total; the last positive entry owns that edge.
  if (!last_positive) throw ValidationError("ValidationError", "weight", "no positive weight");
  return last_positive->engine_id;
}

const std::string& assign(const AllocationConfig& config, SharedRng& rng) {
  return rng.with([&](Rng& r) -> const std::string& { return assign(config, r); });
}

std::optional<std::string> next_fallback(const AllocationConfig& config, const std::set<std::string>& failed) {
  for (const auto& id : config.fallback_order) {
    if (!failed.contains(id)) return id;
  }
  return std::nullopt;
}

}  // namespace reclab
