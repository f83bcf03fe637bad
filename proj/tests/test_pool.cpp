#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "mos/composer.hpp"
#include "mos/errors.hpp"
#include "mos/pool.hpp"
#include "oracles.hpp"

using namespace mos;

namespace {

const LayerTypeSpec kSpec{"q", 8, 8, 4};

std::vector<MosConfig> all_variant_configs() {
  return {MosConfig::lora(2),
          MosConfig::pure_sharing(2, 4),
          MosConfig::random_scaling(2, 4),
          MosConfig::subset_selection(2, 4),
          MosConfig::mixture_of_shards(2, 4, 2, 0),
          MosConfig::mixture_of_shards(2, 4, 2, 1),
          MosConfig::mixture_of_shards(2, 4, 1, 1),
          MosConfig::mixture_of_shards(3, 2, 2, 2)};
}

bool has_failure(const ValidationReport& report, const std::string& name) {
  for (const auto& c : report.failures())
    if (c.name == name) return true;
  return false;
}

}  // namespace

TEST_CASE("pool sizing for a sharded config") {
  const MosConfig cfg = MosConfig::mixture_of_shards(2, 4, 2, 0);
  const PoolSizing s = resolve_pool_sizing(kSpec, cfg);
  CHECK(s.num_public == 16);
  CHECK(s.num_private == 0);
  CHECK(s.shard_len_a == 4);
  CHECK(s.shard_len_b == 4);

  Rng rng(1);
  const auto [a, b] = init_pools(kSpec, cfg, rng);
  CHECK(a.data.rows() == 16);
  CHECK(a.data.cols() == 4);
  CHECK(max_abs(b.data) == 0.0);
  const double bound = std::sqrt(3.0 / 8.0);
  CHECK(max_abs(a.data) <= bound);
  CHECK(max_abs(a.data) > 0.5 * bound);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(resolve_pool_sizing({"q", 9, 8, 4}, MosConfig::mixture_of_shards(2, 4, 2, 0)),
                  ConfigError);
  CHECK_THROWS_AS(resolve_pool_sizing(kSpec, MosConfig::mixture_of_shards(2, 4, 2, 5)),
                  ConfigError);
  // 4 blocks * e=1 * l=1 = 4 public shards cannot host r*l = 8 slots.
  CHECK_THROWS_AS(resolve_pool_sizing(kSpec, MosConfig::mixture_of_shards(1, 8, 1, 0)),
                  BudgetError);
  CHECK_THROWS_AS(resolve_pool_sizing(kSpec, MosConfig::subset_selection(2, 9)), BudgetError);
  MosConfig bad = MosConfig::mixture_of_shards(2, 4, 2, 0);
  bad.dropout = 1.0;
  CHECK_THROWS_AS(resolve_pool_sizing(kSpec, bad), ConfigError);
}

TEST_CASE("budget identity holds for every variant") {
  for (const MosConfig& cfg : all_variant_configs()) {
    CAPTURE(to_string(cfg.variant));
    const PoolSizing s = resolve_pool_sizing(kSpec, cfg);
    const std::size_t shard_params =
        s.total() * (kSpec.in_dim / cfg.shards_per_vector + kSpec.out_dim / cfg.shards_per_vector);
    CHECK(trainable_params(kSpec, cfg) == shard_params);
    CHECK(shard_params == cfg.equivalent_rank * kSpec.num_blocks * (kSpec.in_dim + kSpec.out_dim));
    const AdapterState st = init_state(cfg, {kSpec});
    CHECK(st.trainable_params() == shard_params);
  }
}

TEST_CASE("fresh states validate and start at zero delta") {
  for (const MosConfig& base : all_variant_configs()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      MosConfig cfg = base;
      cfg.seed = seed;
      const AdapterState st = init_state(cfg, {kSpec, {"up", 8, 12, 4}});
      const ValidationReport report = validate(st, true);
      CAPTURE(report.to_string());
      CHECK(report.ok());
      for (std::size_t t = 0; t < st.layer_types.size(); ++t)
        for (std::size_t k = 0; k < 4; ++k) CHECK(max_abs(delta_w(compose_layer(st, t, k))) == 0.0);
    }
  }
}

TEST_CASE("index matrices are deterministic in the seed") {
  const MosConfig cfg = MosConfig::mixture_of_shards(2, 4, 2, 1);
  Rng r1(77), r2(77), r3(78);
  CHECK(init_index_matrices(kSpec, cfg, r1) == init_index_matrices(kSpec, cfg, r2));
  Rng r4(77);
  CHECK(init_index_matrices(kSpec, cfg, r4) != init_index_matrices(kSpec, cfg, r3));
}

TEST_CASE("full privatization uses every private shard exactly once") {
  const MosConfig cfg = MosConfig::mixture_of_shards(3, 2, 2, 2);
  const AdapterState st = init_state(cfg, {kSpec});
  const auto& lt = st.layer_types[0];
  for (const auto* side : {&lt.index_a, &lt.index_b}) {
    std::map<std::uint32_t, int> uses;
    for (const auto& m : *side)
      for (std::uint32_t e : m.entries) {
        CHECK(e >= lt.pool_a.num_public);
        ++uses[e];
      }
    CHECK(uses.size() == lt.pool_a.num_private);
    for (const auto& [idx, n] : uses) CHECK(n == 1);
  }
}

TEST_CASE("private ranks occupy the last positions of their layer") {
  const MosConfig cfg = MosConfig::mixture_of_shards(2, 4, 2, 1);
  const AdapterState st = init_state(cfg, {kSpec});
  const auto& lt = st.layer_types[0];
  const std::size_t pub = lt.pool_a.num_public, l = 2, p = 1;
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t s = 0; s < l; ++s) {
      for (std::size_t i = 0; i < 3; ++i) CHECK(lt.index_a[k](s, i) < pub);
      CHECK(lt.index_a[k](s, 3) == pub + k * l * p + 0 * l + s);
      CHECK(lt.index_b[k](s, 3) == pub + k * l * p + 0 * l + s);
    }
}

TEST_CASE("subset selection is a boolean selection of r pooled pairs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MosConfig cfg = MosConfig::subset_selection(2, 5);
    cfg.seed = seed;
    const AdapterState st = init_state(cfg, {kSpec});
    const auto& lt = st.layer_types[0];
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& idx = lt.index_a[k].entries;
      CHECK(idx == lt.index_b[k].entries);
      CHECK(std::is_sorted(idx.begin(), idx.end()));
      CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
      const auto& mask = lt.scaling[k].mask;
      REQUIRE(mask.size() == 8);
      std::vector<std::uint32_t> from_mask;
      for (std::uint32_t j = 0; j < mask.size(); ++j)
        if (mask[j]) from_mask.push_back(j);
      CHECK(from_mask == idx);
    }
  }
}

TEST_CASE("pure sharing routes the identity to every block") {
  const AdapterState st = init_state(MosConfig::pure_sharing(2, 4), {kSpec});
  const auto& lt = st.layer_types[0];
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(lt.index_a[k](0, i) == i);
      CHECK(lt.index_b[k](0, i) == i);
    }
}

TEST_CASE("validate reports corrupted routing") {
  AdapterState st = init_state(MosConfig::mixture_of_shards(2, 4, 2, 1), {kSpec});
  REQUIRE(validate(st).ok());

  AdapterState out_of_range = st;
  out_of_range.layer_types[0].index_a[1](0, 0) =
      static_cast<std::uint32_t>(out_of_range.layer_types[0].pool_a.num_shards());
  CHECK(has_failure(validate(out_of_range), "index.range"));

  AdapterState dup = st;
  auto& lt = dup.layer_types[0];
  lt.index_b[2](0, 3) = lt.index_b[1](0, 3);
  CHECK(has_failure(validate(dup), "private.exclusive"));

  AdapterState nonzero_b = st;
  nonzero_b.layer_types[0].pool_b.data(0, 0) = 1.0;
  CHECK(validate(nonzero_b).ok());
  CHECK(has_failure(validate(nonzero_b, true), "pool.b_zero_init"));
}
