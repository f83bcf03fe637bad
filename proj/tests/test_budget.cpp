#include <doctest.h>

#include <string>

#include "mos/budget.hpp"
#include "mos/errors.hpp"

using namespace mos;

TEST_CASE("LLaMA2-7B LoRA parameter counts") {
  const BudgetSpec spec = presets::llama2_7b();
  // Per block: four 4096x4096 projections and three 4096<->11008 ones.
  const std::uint64_t per_rank_per_block = 4 * (4096 + 4096) + 3 * (4096 + 11008);
  CHECK(lora_param_count(spec, 2) == 2 * 32 * per_rank_per_block);
  CHECK(lora_param_count(spec, 2) == 4997120);
  CHECK(lora_param_count(spec, 8) == 19988480);
  CHECK(lora_param_count(spec, 0) == 0);
  CHECK(params_per_equivalent_rank(spec) == 32 * per_rank_per_block);
}

TEST_CASE("equivalent rank at the LoRA r=2 budget") {
  const BudgetSpec spec = presets::llama2_7b();
  const EquivalentRank er = solve_equivalent_rank(spec, lora_param_count(spec, 2));
  CHECK(er.equivalent_rank == 2);
  REQUIRE(er.pool_rank.size() == 7);
  for (auto pr : er.pool_rank) CHECK(pr == 64);
}

TEST_CASE("solver round-trips LoRA budgets") {
  for (const BudgetSpec& spec :
       {presets::llama2_7b(), presets::llama2_70b_attention(), presets::uniform(16, 4, 2)}) {
    for (std::uint64_t r = 1; r <= 16; ++r)
      CHECK(solve_equivalent_rank(spec, lora_param_count(spec, r)).equivalent_rank == r);
  }
}

TEST_CASE("non-integral budgets name the nearest feasible ones") {
  const BudgetSpec spec = presets::uniform(16, 4);
  // One equivalent rank costs 4 * 32 = 128 parameters.
  try {
    solve_equivalent_rank(spec, 300);
    FAIL("expected BudgetError");
  } catch (const BudgetError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("256") != std::string::npos);
    CHECK(msg.find("384") != std::string::npos);
  }
  CHECK_THROWS_AS(solve_equivalent_rank(spec, 0), BudgetError);
}

TEST_CASE("serving memory is linear in tenants and rank") {
  const BudgetSpec spec = presets::llama2_70b_attention();
  const std::uint64_t bytes = serving_memory(spec, 16, 10000, 4);
  CHECK(bytes == 10000ULL * 80 * 4 * 16 * (8192 + 8192) * 4);
  CHECK(serving_memory(spec, 16, 10000, 2) * 2 == bytes);
  CHECK(serving_memory(spec, 16, 0, 4) == 0);
}
