#include "mos/serving.hpp"

#include <algorithm>
#include <cassert>
#include <future>

#include "mos/errors.hpp"

namespace mos {

std::string_view to_string(TenantState s) noexcept {
  switch (s) {
    case TenantState::registered: return "registered";
    case TenantState::composed: return "composed";
    case TenantState::merged: return "merged";
  }
  return "unknown";
}

Registry::Registry(BudgetSpec base, std::size_t precision_bytes)
    : base_(std::move(base)), precision_(precision_bytes) {
  if (precision_ != 2 && precision_ != 4) throw ConfigError("precision must be 2 or 4 bytes");
  if (base_.layer_types.empty()) throw ConfigError("registry needs base model layer types");
}

std::uint64_t Registry::bytes_for(const MosConfig& config) const {
  std::uint64_t params = 0;
  for (const auto& lt : base_.layer_types) params += trainable_params(lt, config);
  return params * precision_;
}

TenantRecord& Registry::find(const std::string& id) {
  auto it = tenants_.find(id);
  if (it == tenants_.end()) throw RegistryError("unknown tenant '" + id + "'");
  return it->second;
}

const TenantRecord& Registry::at(const std::string& id) const {
  auto it = tenants_.find(id);
  if (it == tenants_.end()) throw RegistryError("unknown tenant '" + id + "'");
  return it->second;
}

const TenantRecord& Registry::insert(TenantRecord record) {
  if (tenants_.count(record.tenant_id) != 0) {
    throw RegistryError("tenant '" + record.tenant_id + "' already registered");
  }
  total_bytes_ += record.memory_bytes;
  auto [it, inserted] = tenants_.emplace(record.tenant_id, std::move(record));
  assert(inserted);
  return it->second;
}

const TenantRecord& Registry::register_tenant(const std::string& id, const MosConfig& config) {
  TenantRecord rec;
  rec.tenant_id = id;
  rec.config = config;
  rec.memory_bytes = bytes_for(config);
  return insert(std::move(rec));
}

const TenantRecord& Registry::register_tenant(const std::string& id, AdapterState adapter) {
  if (adapter.layer_types.size() != base_.layer_types.size()) {
    throw RegistryError("tenant '" + id + "' adapter does not cover the base model's layer types");
  }
  for (std::size_t t = 0; t < base_.layer_types.size(); ++t) {
    if (adapter.layer_types[t].spec != base_.layer_types[t]) {
      throw RegistryError("tenant '" + id + "' layer type '" + adapter.layer_types[t].spec.name +
                          "' does not match the base model");
    }
  }
  TenantRecord rec;
  rec.tenant_id = id;
  rec.config = adapter.config;
  rec.memory_bytes = adapter.trainable_params() * precision_;
  // Registry-wide versions, so a re-registered id never matches a cache
  // entry composed from its previous adapter.
  adapter.version = ++version_clock_;
  rec.adapter = std::move(adapter);
  return insert(std::move(rec));
}

void Registry::unregister(const std::string& id) {
  const TenantRecord& rec = find(id);
  total_bytes_ -= rec.memory_bytes;
  tenants_.erase(id);
}

ComposedSet compose_all(const AdapterState& state, unsigned threads) {
  ComposedSet out;
  for (std::size_t t = 0; t < state.layer_types.size(); ++t) {
    out.push_back(precompose_all(state, t, threads));
  }
  return out;
}

void Registry::activate(const std::string& id) {
  TenantRecord& rec = find(id);
  if (rec.adapter) rec.composed = compose_all(*rec.adapter);
  rec.state = TenantState::composed;
}

SwapEvent Registry::swap(const std::string& out_id, const std::string& in_id) {
  TenantRecord& out = find(out_id);
  TenantRecord& in = find(in_id);
  SwapEvent ev{out_id, in_id, 0, 0};
  if (out_id == in_id) {
    log_.push_back(ev);
    return ev;
  }
  if (out.state != TenantState::registered) ev.bytes_released = out.memory_bytes;
  out.composed.clear();
  out.state = TenantState::registered;
  if (in.adapter) in.composed = compose_all(*in.adapter);
  in.state = TenantState::composed;
  ev.bytes_moved = in.memory_bytes;
  log_.push_back(ev);
  assert(total_bytes_ == recompute_total());
  return ev;
}

void Registry::update_pools(const std::string& id,
                            const std::function<void(AdapterState&)>& mutate) {
  TenantRecord& rec = find(id);
  if (!rec.adapter) throw RegistryError("tenant '" + id + "' is accounting-only");
  mutate(*rec.adapter);
  rec.adapter->version = ++version_clock_;
  if (rec.state != TenantState::registered) rec.composed = compose_all(*rec.adapter);
}

Vector Registry::forward(const std::string& id, std::size_t type_index, std::size_t layer,
                         const Matrix& w0, std::span<const double> x) const {
  const TenantRecord& rec = at(id);
  if (rec.state == TenantState::registered || rec.composed.empty()) {
    throw RegistryError("tenant '" + id + "' is not active");
  }
  if (type_index >= rec.composed.size() || layer >= rec.composed[type_index].size()) {
    throw RoutingError("tenant '" + id + "': no such block");
  }
  return mos::forward(rec.composed[type_index][layer], w0, x);
}

std::uint64_t Registry::recompute_total() const noexcept {
  std::uint64_t total = 0;
  for (const auto& [id, rec] : tenants_) total += rec.memory_bytes;
  return total;
}

void ComposeCache::precompute(const Registry& registry, std::span<const std::string> ids,
                              unsigned threads) {
  std::vector<const AdapterState*> states;
  for (const auto& id : ids) {
    const TenantRecord& rec = registry.at(id);
    if (!rec.adapter) throw RegistryError("tenant '" + id + "' has no adapter to compose");
    states.push_back(&*rec.adapter);
  }
  std::vector<Entry> fresh(ids.size());
  auto work = [&](std::size_t i) { fresh[i] = {states[i]->version, compose_all(*states[i])}; };
  if (threads <= 1) {
    for (std::size_t i = 0; i < ids.size(); ++i) work(i);
  } else {
    std::vector<std::future<void>> workers;
    const std::size_t t = std::min<std::size_t>(threads, std::max<std::size_t>(ids.size(), 1));
    for (std::size_t w = 0; w < t; ++w) {
      workers.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < ids.size(); i += t) work(i);
      }));
    }
    for (auto& f : workers) f.get();
  }
  for (std::size_t i = 0; i < ids.size(); ++i) entries_[ids[i]] = std::move(fresh[i]);
}

const ComposedSet& ComposeCache::read(const Registry& registry, const std::string& id) const {
  const TenantRecord& rec = registry.at(id);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw StaleCacheError("no precomputed entry for tenant '" + id + "'");
  if (!rec.adapter || it->second.pool_version != rec.adapter->version) {
    throw StaleCacheError("cached composition for tenant '" + id + "' is stale (pool version " +
                          std::to_string(it->second.pool_version) + " vs " +
                          std::to_string(rec.adapter ? rec.adapter->version : 0) + ")");
  }
  return it->second.composed;
}

const ComposedSet& ComposeCache::fetch(const Registry& registry, const std::string& id) {
  const TenantRecord& rec = registry.at(id);
  if (!rec.adapter) throw RegistryError("tenant '" + id + "' has no adapter to compose");
  auto it = entries_.find(id);
  if (it != entries_.end() && it->second.pool_version == rec.adapter->version) {
    ++hits_;
    return it->second.composed;
  }
  ++misses_;
  Entry& e = entries_[id];
  e = {rec.adapter->version, compose_all(*rec.adapter)};
  return e.composed;
}

MemoryReport simulate_memory(const BudgetSpec& base, const std::string& preset_name,
                             const MosConfig& config, std::uint64_t tenants,
                             std::size_t precision_bytes) {
  Registry registry(base, precision_bytes);
  for (std::uint64_t i = 0; i < tenants; ++i) {
    registry.register_tenant("tenant-" + std::to_string(i), config);
  }
  MemoryReport report;
  report.method = config.variant == Variant::lora ? "lora" : std::string(to_string(config.variant));
  report.preset = preset_name;
  report.tenants = tenants;
  report.bytes_per_param = precision_bytes;
  report.bytes_per_tenant = registry.bytes_for(config);
  report.params_per_tenant = report.bytes_per_tenant / precision_bytes;
  report.total_bytes = registry.total_memory();

  std::string types;
  for (const auto& lt : base.layer_types) types += (types.empty() ? "" : ",") + lt.name;
  report.assumptions.push_back("adapted layer types: " + types);
  report.assumptions.push_back("bytes per parameter: " + std::to_string(precision_bytes) +
                               (precision_bytes == 4 ? " (fp32)" : " (fp16/bf16)"));
  report.assumptions.push_back("adapter parameters only; base weights and optimizer state excluded");
  report.assumptions.push_back("terabytes are decimal (1 TB = 1e12 bytes)");
  return report;
}

}  // namespace mos
