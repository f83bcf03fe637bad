#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mos {

// One linear-layer type (query, up, down, ...) repeated across L blocks.
struct LayerTypeSpec {
  std::string name;
  std::size_t in_dim = 0;      // h
  std::size_t out_dim = 0;     // o
  std::size_t num_blocks = 0;  // L

  bool operator==(const LayerTypeSpec&) const = default;
};

enum class Variant : std::uint32_t {
  lora = 0,
  pure_sharing = 1,
  random_scaling = 2,
  subset_selection = 3,
  mos = 4,
};

std::string_view to_string(Variant v) noexcept;
std::optional<Variant> parse_variant(std::string_view name) noexcept;

enum class Side : std::uint8_t { a = 0, b = 1 };

// Per-adapter hyperparameters. Every variant is expressed through the same
// pool/index machinery:
//   lora             l = 1, p = r = e: every rank is private to its layer
//   pure_sharing     l = 1, p = 0, r = eL, identity routing on both sides
//   random_scaling   pure_sharing plus frozen per-layer normal scalars
//   subset_selection l = 1, p = 0, r <= eL, one sorted subset per layer,
//                    the same indices on both sides
//   mos              sharded, partly private, independently routed sides
//                    (tied_indices switches pair dissociation off)
struct MosConfig {
  std::size_t rank = 1;              // r
  std::size_t shards_per_vector = 1; // l
  std::size_t private_rank = 0;      // p
  std::size_t equivalent_rank = 1;   // e
  Variant variant = Variant::mos;
  bool tied_indices = false;
  double alpha = 16.0;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  double scaling() const noexcept { return alpha / static_cast<double>(rank); }

  bool operator==(const MosConfig&) const = default;

  static MosConfig lora(std::size_t rank);
  static MosConfig pure_sharing(std::size_t equivalent_rank, std::size_t num_blocks);
  static MosConfig random_scaling(std::size_t equivalent_rank, std::size_t num_blocks);
  static MosConfig subset_selection(std::size_t equivalent_rank, std::size_t rank);
  static MosConfig mixture_of_shards(std::size_t equivalent_rank, std::size_t rank,
                                     std::size_t shards_per_vector, std::size_t private_rank);
};

// Shard counts for one side of one layer-type pool.
struct PoolSizing {
  std::size_t num_public = 0;
  std::size_t num_private = 0;
  std::size_t shard_len_a = 0;  // h / l
  std::size_t shard_len_b = 0;  // o / l

  std::size_t total() const noexcept { return num_public + num_private; }
};

// Checks the config on its own and against one layer type, and resolves
// the pool sizes: public = l*e*L - l*p*L, private = l*p*L.
// Throws ConfigError for structural problems, BudgetError when the budget
// cannot host the requested routing.
PoolSizing resolve_pool_sizing(const LayerTypeSpec& spec, const MosConfig& cfg);

// Trainable parameters of one layer type: e * L * (h + o).
std::size_t trainable_params(const LayerTypeSpec& spec, const MosConfig& cfg);

}  // namespace mos
