#include "mos/budget.hpp"

#include "mos/errors.hpp"

namespace mos {

namespace presets {

BudgetSpec llama2_7b() {
  constexpr std::size_t hidden = 4096, inter = 11008, blocks = 32;
  return BudgetSpec{{
                        {"query", hidden, hidden, blocks},
                        {"key", hidden, hidden, blocks},
                        {"value", hidden, hidden, blocks},
                        {"output", hidden, hidden, blocks},
                        {"up", hidden, inter, blocks},
                        {"gate", hidden, inter, blocks},
                        {"down", inter, hidden, blocks},
                    },
                    4};
}

BudgetSpec llama2_70b_attention() {
  constexpr std::size_t hidden = 8192, blocks = 80;
  return BudgetSpec{{
                        {"query", hidden, hidden, blocks},
                        {"key", hidden, hidden, blocks},
                        {"value", hidden, hidden, blocks},
                        {"output", hidden, hidden, blocks},
                    },
                    4};
}

BudgetSpec uniform(std::size_t dim, std::size_t num_blocks, std::size_t num_types) {
  BudgetSpec spec;
  for (std::size_t t = 0; t < num_types; ++t)
    spec.layer_types.push_back({"proj" + std::to_string(t), dim, dim, num_blocks});
  return spec;
}

}  // namespace presets

std::uint64_t params_per_equivalent_rank(const BudgetSpec& spec) {
  std::uint64_t total = 0;
  for (const auto& lt : spec.layer_types) {
    if (lt.in_dim == 0 || lt.out_dim == 0 || lt.num_blocks == 0) {
      throw ConfigError("layer type '" + lt.name + "' has a zero dimension");
    }
    total += static_cast<std::uint64_t>(lt.num_blocks) * (lt.in_dim + lt.out_dim);
  }
  return total;
}

std::uint64_t lora_param_count(const BudgetSpec& spec, std::uint64_t rank) {
  return rank * params_per_equivalent_rank(spec);
}

EquivalentRank solve_equivalent_rank(const BudgetSpec& spec, std::uint64_t param_budget) {
  const std::uint64_t unit = params_per_equivalent_rank(spec);
  if (unit == 0) throw BudgetError("no layer types to spend a budget on");
  if (param_budget % unit != 0 || param_budget == 0) {
    const std::uint64_t below = param_budget / unit * unit;
    const std::uint64_t above = below + unit;
    throw BudgetError("budget " + std::to_string(param_budget) +
                      " is not a positive multiple of " + std::to_string(unit) +
                      " parameters per equivalent rank; nearest feasible budgets are " +
                      (below > 0 ? std::to_string(below) + " and " : std::string{}) +
                      std::to_string(above));
  }
  EquivalentRank out;
  out.equivalent_rank = param_budget / unit;
  for (const auto& lt : spec.layer_types) out.pool_rank.push_back(out.equivalent_rank * lt.num_blocks);
  return out;
}

std::uint64_t serving_memory(const BudgetSpec& spec, std::uint64_t rank, std::uint64_t num_tenants,
                             std::uint64_t bytes_per_param) {
  return num_tenants * lora_param_count(spec, rank) * bytes_per_param;
}

}  // namespace mos
