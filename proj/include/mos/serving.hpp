#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mos/budget.hpp"
#include "mos/composer.hpp"
#include "mos/pool.hpp"

namespace mos {

enum class TenantState { registered, composed, merged };

std::string_view to_string(TenantState s) noexcept;

// Composed blocks of one tenant: outer index layer type, inner index block.
using ComposedSet = std::vector<std::vector<ComposedAdapter>>;

struct TenantRecord {
  std::string tenant_id;
  MosConfig config;
  // Accounting-only tenants carry no adapter state.
  std::optional<AdapterState> adapter;
  TenantState state = TenantState::registered;
  std::uint64_t memory_bytes = 0;
  ComposedSet composed;
};

struct SwapEvent {
  std::string out_id;
  std::string in_id;
  std::uint64_t bytes_released = 0;
  std::uint64_t bytes_moved = 0;  // adapter bytes brought in; base weights never move
};

// Multi-tenant adapter registry over one base model. Mutations are
// single-writer; the total is kept equal to the sum of tenant bytes.
class Registry {
 public:
  Registry(BudgetSpec base, std::size_t precision_bytes);

  // Accounting-only tenant described by its config.
  const TenantRecord& register_tenant(const std::string& id, const MosConfig& config);
  // Tenant with a concrete adapter; its layer types must match the base.
  const TenantRecord& register_tenant(const std::string& id, AdapterState adapter);
  void unregister(const std::string& id);

  // Releases out_id's composed matrices and composes in_id's. swap(x, x)
  // is a no-op that moves zero bytes.
  SwapEvent swap(const std::string& out_id, const std::string& in_id);

  // Composes every block of every layer type for the tenant.
  void activate(const std::string& id);

  // Runs `mutate` on the tenant's pools and bumps the pool version.
  void update_pools(const std::string& id, const std::function<void(AdapterState&)>& mutate);

  // Adapter output for one block of an active tenant.
  Vector forward(const std::string& id, std::size_t type_index, std::size_t layer, const Matrix& w0,
                 std::span<const double> x) const;

  const TenantRecord& at(const std::string& id) const;
  bool contains(const std::string& id) const { return tenants_.count(id) != 0; }
  std::size_t size() const noexcept { return tenants_.size(); }
  const BudgetSpec& base() const noexcept { return base_; }
  std::size_t precision_bytes() const noexcept { return precision_; }

  std::uint64_t total_memory() const noexcept { return total_bytes_; }
  // Recomputed from the records, independent of the running total.
  std::uint64_t recompute_total() const noexcept;
  const std::vector<SwapEvent>& log() const noexcept { return log_; }

  std::uint64_t bytes_for(const MosConfig& config) const;

 private:
  TenantRecord& find(const std::string& id);
  const TenantRecord& insert(TenantRecord record);

  BudgetSpec base_;
  std::size_t precision_;
  std::map<std::string, TenantRecord> tenants_;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t version_clock_ = 0;
  std::vector<SwapEvent> log_;
};

// Composes every block of every layer type of `state`.
ComposedSet compose_all(const AdapterState& state, unsigned threads = 1);

// Ahead-of-activation composition cache keyed by tenant and pool version.
class ComposeCache {
 public:
  // Composes the listed tenants, fanned out over `threads` workers.
  void precompute(const Registry& registry, std::span<const std::string> ids, unsigned threads = 1);

  // Strict read: throws StaleCacheError when the entry is missing or its
  // pool version no longer matches the tenant's pools.
  const ComposedSet& read(const Registry& registry, const std::string& id) const;

  // Serving read: recomposes on a miss or a stale entry.
  const ComposedSet& fetch(const Registry& registry, const std::string& id);

  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    std::uint64_t pool_version = 0;
    ComposedSet composed;
  };
  std::map<std::string, Entry> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct MemoryReport {
  std::string method;
  std::string preset;
  std::uint64_t tenants = 0;
  std::uint64_t params_per_tenant = 0;
  std::uint64_t bytes_per_param = 0;
  std::uint64_t bytes_per_tenant = 0;
  std::uint64_t total_bytes = 0;
  std::vector<std::string> assumptions;
};

// Registers `tenants` accounting-only adapters of `config` and reports the
// registry's totals.
MemoryReport simulate_memory(const BudgetSpec& base, const std::string& preset_name,
                             const MosConfig& config, std::uint64_t tenants,
                             std::size_t precision_bytes);

}  // namespace mos
