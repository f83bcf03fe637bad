#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mos/config.hpp"
#include "mos/matrix.hpp"
#include "mos/rng.hpp"

namespace mos {

// Trainable shard storage for one side of one layer type. Rows
// [0, num_public) are public, [num_public, num_public + num_private) private.
struct ShardPool {
  Side side = Side::a;
  std::size_t num_public = 0;
  std::size_t num_private = 0;
  Matrix data;  // (num_public + num_private) x shard_len

  std::size_t num_shards() const noexcept { return num_public + num_private; }
  std::size_t shard_len() const noexcept { return data.cols(); }
  bool operator==(const ShardPool&) const = default;
};

// Frozen routing table for one layer and side: entry(s, i) names the pool
// shard placed at position s of rank vector i.
struct IndexMatrix {
  std::size_t layer = 0;
  Side side = Side::a;
  std::size_t shards_per_vector = 0;  // l (rows)
  std::size_t rank = 0;               // r (cols)
  std::vector<std::uint32_t> entries; // row-major l x r

  std::uint32_t operator()(std::size_t shard, std::size_t rank_pos) const noexcept {
    return entries[shard * rank + rank_pos];
  }
  std::uint32_t& operator()(std::size_t shard, std::size_t rank_pos) noexcept {
    return entries[shard * rank + rank_pos];
  }
  bool operator==(const IndexMatrix&) const = default;
};

// Frozen per-layer differentiation: normal scalars (random scaling) or a
// boolean selection over the eL pooled pairs (subset selection).
struct ScalingVector {
  std::size_t layer = 0;
  Vector scalars;                  // length r; empty unless random scaling
  std::vector<std::uint8_t> mask;  // length eL; empty unless subset selection
  bool operator==(const ScalingVector&) const = default;
};

struct LayerTypeState {
  LayerTypeSpec spec;
  ShardPool pool_a;
  ShardPool pool_b;
  std::vector<IndexMatrix> index_a;  // one per block
  std::vector<IndexMatrix> index_b;
  std::vector<ScalingVector> scaling;  // one per block for random_scaling / subset_selection

  bool operator==(const LayerTypeState&) const = default;
};

// Everything that defines one tenant's adapter. `version` increases on every
// pool write so composed caches can detect staleness.
struct AdapterState {
  MosConfig config;
  std::vector<LayerTypeState> layer_types;
  std::uint64_t version = 0;

  void mark_pools_modified() noexcept { ++version; }
  const LayerTypeState& layer_type(const std::string& name) const;
  std::size_t trainable_params() const;
};

// Side A uniform in [-sqrt(3/h), +sqrt(3/h)] using the full input dim h,
// side B all zeros.
std::pair<ShardPool, ShardPool> init_pools(const LayerTypeSpec& spec, const MosConfig& cfg,
                                           Rng& rng);

// 2L matrices ordered (A_0, B_0, A_1, B_1, ...). The last p rank positions
// of layer k take private shards num_public + k*l*p + j*l + s; public
// positions draw uniformly with replacement. Subset selection draws one
// sorted r-subset per layer; pure sharing routes the identity.
std::vector<IndexMatrix> init_index_matrices(const LayerTypeSpec& spec, const MosConfig& cfg,
                                             Rng& rng);

// Per-block scalars/masks for the two ablation variants; empty otherwise.
// Masks are recovered from the (already drawn) index matrices.
std::vector<ScalingVector> init_scaling(const LayerTypeSpec& spec, const MosConfig& cfg,
                                        std::span<const IndexMatrix> index_a, Rng& rng);

LayerTypeState init_layer_type(const LayerTypeSpec& spec, const MosConfig& cfg, Rng& rng);

// Builds all layer types from cfg.seed; each type gets its own forked stream.
AdapterState init_state(const MosConfig& cfg, const std::vector<LayerTypeSpec>& layer_types);

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool ok() const noexcept;
  std::vector<CheckResult> failures() const;
  std::string to_string() const;
};

// Checks every structural invariant; never throws, failures go in the report.
// `require_zero_b` additionally checks the freshly-initialized B pools.
ValidationReport validate(const AdapterState& state, bool require_zero_b = false);

}  // namespace mos
