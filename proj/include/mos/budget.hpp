#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mos/config.hpp"

namespace mos {

// Model dimensions for parameter and memory accounting.
struct BudgetSpec {
  std::vector<LayerTypeSpec> layer_types;
  std::size_t bytes_per_param = 4;
};

namespace presets {

// LLaMA2-7B: hidden 4096, intermediate 11008, 32 blocks, all seven projections.
BudgetSpec llama2_7b();
// 70B-class attention projections only: q, k, v, o at 8192 x 8192, 80 blocks.
BudgetSpec llama2_70b_attention();
// Uniform square layer types, handy for toy budgets.
BudgetSpec uniform(std::size_t dim, std::size_t num_blocks, std::size_t num_types = 1);

}  // namespace presets

// Sum over layer types of L * r * (h + o).
std::uint64_t lora_param_count(const BudgetSpec& spec, std::uint64_t rank);

// Parameters one unit of equivalent rank costs: sum of L * (h + o).
std::uint64_t params_per_equivalent_rank(const BudgetSpec& spec);

struct EquivalentRank {
  std::uint64_t equivalent_rank = 0;  // e, shared by all layer types
  // e * L per layer type, in spec order.
  std::vector<std::uint64_t> pool_rank;
};

// Solves budget = e * sum L(h+o) for integral e. A budget that is not an
// exact multiple raises BudgetError naming the nearest feasible budgets.
EquivalentRank solve_equivalent_rank(const BudgetSpec& spec, std::uint64_t param_budget);

// num_tenants * lora_param_count(spec, rank) * bytes_per_param.
std::uint64_t serving_memory(const BudgetSpec& spec, std::uint64_t rank, std::uint64_t num_tenants,
                             std::uint64_t bytes_per_param);

}  // namespace mos
