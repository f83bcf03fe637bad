#include "mos/config.hpp"

#include <array>
#include <utility>

#include "mos/errors.hpp"

namespace mos {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariantNames{{
    {Variant::lora, "lora"},
    {Variant::pure_sharing, "pure_sharing"},
    {Variant::random_scaling, "random_scaling"},
    {Variant::subset_selection, "subset_selection"},
    {Variant::mos, "mos"},
}};

std::string num(std::size_t v) { return std::to_string(v); }

}  // namespace

std::string_view to_string(Variant v) noexcept {
  for (const auto& [variant, name] : kVariantNames)
    if (variant == v) return name;
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) noexcept {
  for (const auto& [variant, n] : kVariantNames)
    if (n == name) return variant;
  if (name == "pure") return Variant::pure_sharing;
  if (name == "subset") return Variant::subset_selection;
  if (name == "scaling") return Variant::random_scaling;
  return std::nullopt;
}

MosConfig MosConfig::lora(std::size_t rank) {
  MosConfig cfg;
  cfg.variant = Variant::lora;
  cfg.rank = rank;
  cfg.equivalent_rank = rank;
  cfg.private_rank = rank;
  cfg.shards_per_vector = 1;
  return cfg;
}

MosConfig MosConfig::pure_sharing(std::size_t equivalent_rank, std::size_t num_blocks) {
  MosConfig cfg;
  cfg.variant = Variant::pure_sharing;
  cfg.equivalent_rank = equivalent_rank;
  cfg.rank = equivalent_rank * num_blocks;
  cfg.tied_indices = true;
  return cfg;
}

MosConfig MosConfig::random_scaling(std::size_t equivalent_rank, std::size_t num_blocks) {
  MosConfig cfg = pure_sharing(equivalent_rank, num_blocks);
  cfg.variant = Variant::random_scaling;
  return cfg;
}

MosConfig MosConfig::subset_selection(std::size_t equivalent_rank, std::size_t rank) {
  MosConfig cfg;
  cfg.variant = Variant::subset_selection;
  cfg.equivalent_rank = equivalent_rank;
  cfg.rank = rank;
  cfg.tied_indices = true;
  return cfg;
}

MosConfig MosConfig::mixture_of_shards(std::size_t equivalent_rank, std::size_t rank,
                                       std::size_t shards_per_vector,
                                       std::size_t private_rank) {
  MosConfig cfg;
  cfg.variant = Variant::mos;
  cfg.equivalent_rank = equivalent_rank;
  cfg.rank = rank;
  cfg.shards_per_vector = shards_per_vector;
  cfg.private_rank = private_rank;
  return cfg;
}

PoolSizing resolve_pool_sizing(const LayerTypeSpec& spec, const MosConfig& cfg) {
  const std::size_t h = spec.in_dim, o = spec.out_dim, L = spec.num_blocks;
  const std::size_t r = cfg.rank, l = cfg.shards_per_vector, p = cfg.private_rank;
  const std::size_t e = cfg.equivalent_rank;

  if (h == 0 || o == 0 || L == 0) {
    throw ConfigError("layer type '" + spec.name + "' needs positive in_dim, out_dim, num_blocks");
  }
  if (r == 0 || l == 0) throw ConfigError("rank and shards_per_vector must be at least 1");
  if (p > r) throw ConfigError("private_rank " + num(p) + " exceeds rank " + num(r));
  if (h % l != 0 || o % l != 0) {
    throw ConfigError("layer type '" + spec.name + "': dims " + num(h) + "x" + num(o) +
                      " not divisible by shards_per_vector " + num(l));
  }
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");

  switch (cfg.variant) {
    case Variant::lora:
      if (l != 1 || p != r || e != r) {
        throw ConfigError("lora requires shards_per_vector=1 and private_rank=equivalent_rank=rank");
      }
      break;
    case Variant::pure_sharing:
    case Variant::random_scaling:
      if (l != 1 || p != 0 || r != e * L) {
        throw ConfigError(std::string(to_string(cfg.variant)) +
                          " requires shards_per_vector=1, private_rank=0 and rank=e*L=" +
                          num(e * L));
      }
      break;
    case Variant::subset_selection:
      if (l != 1 || p != 0) {
        throw ConfigError("subset_selection requires shards_per_vector=1 and private_rank=0");
      }
      if (r > e * L) {
        throw BudgetError("subset_selection rank " + num(r) + " exceeds pool rank e*L=" + num(e * L));
      }
      break;
    case Variant::mos:
      break;
  }

  if (e < p) {
    throw BudgetError("equivalent_rank " + num(e) + " cannot host " + num(p) +
                      " private ranks per layer");
  }
  PoolSizing sizing;
  sizing.num_private = l * p * L;
  sizing.num_public = l * e * L - sizing.num_private;
  sizing.shard_len_a = h / l;
  sizing.shard_len_b = o / l;
  // With p = r nothing is routed from the public pool, so it may be empty.
  if (cfg.variant == Variant::mos && p < r && sizing.num_public < r * l) {
    throw BudgetError("public pool of " + num(sizing.num_public) + " shards is smaller than r*l=" +
                      num(r * l) + "; raise equivalent_rank or lower private_rank");
  }
  return sizing;
}

std::size_t trainable_params(const LayerTypeSpec& spec, const MosConfig& cfg) {
  const PoolSizing s = resolve_pool_sizing(spec, cfg);
  return s.total() * (s.shard_len_a + s.shard_len_b);
}

}  // namespace mos
