#include "mos/pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mos/errors.hpp"

namespace mos {

const LayerTypeState& AdapterState::layer_type(const std::string& name) const {
  for (const auto& lt : layer_types)
    if (lt.spec.name == name) return lt;
  throw ConfigError("unknown layer type '" + name + "'");
}

std::size_t AdapterState::trainable_params() const {
  std::size_t total = 0;
  for (const auto& lt : layer_types) total += lt.pool_a.data.size() + lt.pool_b.data.size();
  return total;
}

std::pair<ShardPool, ShardPool> init_pools(const LayerTypeSpec& spec, const MosConfig& cfg,
                                           Rng& rng) {
  const PoolSizing sizing = resolve_pool_sizing(spec, cfg);

  ShardPool a{Side::a, sizing.num_public, sizing.num_private,
              Matrix(sizing.total(), sizing.shard_len_a)};
  const double bound = std::sqrt(3.0 / static_cast<double>(spec.in_dim));
  const Vector draws = sample_uniform(rng, a.data.size(), bound);
  std::copy(draws.begin(), draws.end(), a.data.data().begin());

  ShardPool b{Side::b, sizing.num_public, sizing.num_private,
              Matrix(sizing.total(), sizing.shard_len_b)};
  return {std::move(a), std::move(b)};
}

std::vector<IndexMatrix> init_index_matrices(const LayerTypeSpec& spec, const MosConfig& cfg,
                                             Rng& rng) {
  const PoolSizing sizing = resolve_pool_sizing(spec, cfg);
  const std::size_t L = spec.num_blocks, r = cfg.rank, l = cfg.shards_per_vector;
  const std::size_t p = cfg.private_rank;
  if (sizing.num_private != L * l * p) {
    throw ConfigError("private capacity " + std::to_string(sizing.num_private) +
                      " does not match L*l*p=" + std::to_string(L * l * p));
  }
  if (r > p && sizing.num_public == 0) {
    throw BudgetError("no public shards available for " + std::to_string(r - p) +
                      " public rank positions");
  }

  auto blank = [&](std::size_t k, Side side) {
    return IndexMatrix{k, side, l, r, std::vector<std::uint32_t>(l * r, 0)};
  };

  std::vector<IndexMatrix> out;
  out.reserve(2 * L);
  for (std::size_t k = 0; k < L; ++k) {
    IndexMatrix ia = blank(k, Side::a);
    IndexMatrix ib = blank(k, Side::b);

    switch (cfg.variant) {
      case Variant::pure_sharing:
      case Variant::random_scaling:
        for (std::size_t i = 0; i < r; ++i) ia(0, i) = static_cast<std::uint32_t>(i);
        ib.entries = ia.entries;
        break;
      case Variant::subset_selection: {
        // Partial Fisher-Yates over the eL pooled pairs, then sort: the
        // selection is a set, its order carries no meaning.
        std::vector<std::uint32_t> perm(sizing.total());
        std::iota(perm.begin(), perm.end(), 0u);
        for (std::size_t i = 0; i < r; ++i) {
          const std::size_t j = i + rng.below(perm.size() - i);
          std::swap(perm[i], perm[j]);
        }
        std::sort(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(r));
        for (std::size_t i = 0; i < r; ++i) ia(0, i) = perm[i];
        ib.entries = ia.entries;
        break;
      }
      case Variant::lora:
      case Variant::mos: {
        const std::size_t public_cols = r - p;
        auto fill_public = [&](IndexMatrix& m) {
          for (std::size_t s = 0; s < l; ++s)
            for (std::size_t i = 0; i < public_cols; ++i)
              m(s, i) = static_cast<std::uint32_t>(rng.below(sizing.num_public));
        };
        auto fill_private = [&](IndexMatrix& m) {
          const std::size_t base = sizing.num_public + k * l * p;
          for (std::size_t j = 0; j < p; ++j)
            for (std::size_t s = 0; s < l; ++s)
              m(s, public_cols + j) = static_cast<std::uint32_t>(base + j * l + s);
        };
        fill_public(ia);
        fill_private(ia);
        if (cfg.tied_indices) {
          ib.entries = ia.entries;
        } else {
          fill_public(ib);
          fill_private(ib);
        }
        break;
      }
    }
    out.push_back(std::move(ia));
    out.push_back(std::move(ib));
  }
  return out;
}

std::vector<ScalingVector> init_scaling(const LayerTypeSpec& spec, const MosConfig& cfg,
                                        std::span<const IndexMatrix> index_a, Rng& rng) {
  std::vector<ScalingVector> out;
  if (cfg.variant == Variant::random_scaling) {
    for (std::size_t k = 0; k < spec.num_blocks; ++k)
      out.push_back(ScalingVector{k, sample_normal(rng, cfg.rank), {}});
  } else if (cfg.variant == Variant::subset_selection) {
    const std::size_t pool_rank = cfg.equivalent_rank * spec.num_blocks;
    for (const IndexMatrix& m : index_a) {
      ScalingVector sv{m.layer, {}, std::vector<std::uint8_t>(pool_rank, 0)};
      for (std::uint32_t idx : m.entries) sv.mask.at(idx) = 1;
      out.push_back(std::move(sv));
    }
  }
  return out;
}

LayerTypeState init_layer_type(const LayerTypeSpec& spec, const MosConfig& cfg, Rng& rng) {
  LayerTypeState lt;
  lt.spec = spec;
  std::tie(lt.pool_a, lt.pool_b) = init_pools(spec, cfg, rng);
  auto indices = init_index_matrices(spec, cfg, rng);
  for (auto& m : indices) {
    (m.side == Side::a ? lt.index_a : lt.index_b).push_back(std::move(m));
  }
  lt.scaling = init_scaling(spec, cfg, lt.index_a, rng);
  return lt;
}

AdapterState init_state(const MosConfig& cfg, const std::vector<LayerTypeSpec>& layer_types) {
  if (layer_types.empty()) throw ConfigError("adapter needs at least one layer type");
  AdapterState state;
  state.config = cfg;
  const Rng root(cfg.seed);
  for (std::size_t t = 0; t < layer_types.size(); ++t) {
    Rng rng = root.fork(t);
    state.layer_types.push_back(init_layer_type(layer_types[t], cfg, rng));
  }
  return state;
}

bool ValidationReport::ok() const noexcept {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<CheckResult> ValidationReport::failures() const {
  std::vector<CheckResult> out;
  std::copy_if(checks.begin(), checks.end(), std::back_inserter(out),
               [](const CheckResult& c) { return !c.passed; });
  return out;
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) os << ": " << c.detail;
    os << '\n';
  }
  return os.str();
}

namespace {

class Checker {
 public:
  explicit Checker(ValidationReport& report) : report_(report) {}

  // Records a check; only the first failure detail per name is kept.
  void expect(const std::string& name, bool cond, const std::string& detail = {}) {
    for (auto& c : report_.checks) {
      if (c.name == name) {
        if (c.passed && !cond) {
          c.passed = false;
          c.detail = detail;
        }
        return;
      }
    }
    report_.checks.push_back({name, cond, cond ? std::string{} : detail});
  }

 private:
  ValidationReport& report_;
};

std::string side_name(Side s) { return s == Side::a ? "A" : "B"; }

void check_indices(Checker& ck, const std::string& tag, const MosConfig& cfg,
                   const ShardPool& pool,
                   const std::vector<IndexMatrix>& indices, Side side, std::size_t L) {
  const std::string sname = tag + "/" + side_name(side);
  ck.expect("index.count", indices.size() == L,
            sname + ": " + std::to_string(indices.size()) + " matrices for " + std::to_string(L) +
                " blocks");
  const std::size_t r = cfg.rank, l = cfg.shards_per_vector, p = cfg.private_rank;
  std::vector<std::size_t> private_uses(pool.num_private, 0);

  for (std::size_t k = 0; k < indices.size(); ++k) {
    const IndexMatrix& m = indices[k];
    const std::string where = sname + " layer " + std::to_string(k);
    const bool shape_ok = m.shards_per_vector == l && m.rank == r && m.entries.size() == l * r &&
                          m.layer == k && m.side == side;
    ck.expect("index.shape", shape_ok, where + " has wrong shape or labels");
    if (!shape_ok) continue;

    for (std::size_t s = 0; s < l; ++s) {
      for (std::size_t i = 0; i < r; ++i) {
        const std::uint32_t idx = m(s, i);
        const std::string at = where + " entry (" + std::to_string(s) + "," + std::to_string(i) +
                               ")=" + std::to_string(idx);
        if (idx >= pool.num_shards()) {
          ck.expect("index.range", false, at + " >= pool size " + std::to_string(pool.num_shards()));
          continue;
        }
        const bool is_private = idx >= pool.num_public;
        const bool private_slot = i >= r - p;
        ck.expect("index.partition", is_private == private_slot,
                  at + (private_slot ? " should be private" : " should be public"));
        if (is_private) ++private_uses[idx - pool.num_public];
      }
    }
  }
  ck.expect("index.range", true);
  ck.expect("index.partition", true);

  for (std::size_t j = 0; j < private_uses.size(); ++j) {
    ck.expect("private.exclusive", private_uses[j] == 1,
              sname + " private shard " + std::to_string(pool.num_public + j) + " used " +
                  std::to_string(private_uses[j]) + " times");
  }
  ck.expect("private.exclusive", true);
}

}  // namespace

ValidationReport validate(const AdapterState& state, bool require_zero_b) {
  ValidationReport report;
  Checker ck(report);
  const MosConfig& cfg = state.config;

  ck.expect("state.layer_types", !state.layer_types.empty(), "no layer types");
  for (const LayerTypeState& lt : state.layer_types) {
    const std::string tag = lt.spec.name;
    PoolSizing sizing;
    try {
      sizing = resolve_pool_sizing(lt.spec, cfg);
      ck.expect("config.resolves", true);
    } catch (const Error& e) {
      ck.expect("config.resolves", false, tag + ": " + e.what());
      continue;
    }
    const std::size_t L = lt.spec.num_blocks;

    auto check_pool = [&](const ShardPool& pool, Side side, std::size_t shard_len) {
      const std::string where = tag + "/" + side_name(side);
      ck.expect("pool.shape",
                pool.side == side && pool.num_public == sizing.num_public &&
                    pool.num_private == sizing.num_private &&
                    pool.data.rows() == sizing.total() && pool.data.cols() == shard_len,
                where + " pool shape disagrees with config");
      ck.expect("pool.finite", all_finite(pool.data.data()), where + " pool has non-finite data");
    };
    check_pool(lt.pool_a, Side::a, sizing.shard_len_a);
    check_pool(lt.pool_b, Side::b, sizing.shard_len_b);
    if (require_zero_b) {
      ck.expect("pool.b_zero_init", max_abs(lt.pool_b.data) == 0.0, tag + " B pool is not zero");
    }

    check_indices(ck, tag, cfg, lt.pool_a, lt.index_a, Side::a, L);
    check_indices(ck, tag, cfg, lt.pool_b, lt.index_b, Side::b, L);

    if (cfg.tied_indices && lt.index_a.size() == lt.index_b.size()) {
      for (std::size_t k = 0; k < lt.index_a.size(); ++k) {
        ck.expect("index.tied", lt.index_a[k].entries == lt.index_b[k].entries,
                  tag + " layer " + std::to_string(k) + " A/B indices differ");
      }
    }

    if (cfg.variant == Variant::pure_sharing || cfg.variant == Variant::random_scaling) {
      for (const auto* side : {&lt.index_a, &lt.index_b}) {
        for (const IndexMatrix& m : *side) {
          bool identity = m.entries.size() == cfg.rank;
          for (std::size_t i = 0; identity && i < m.entries.size(); ++i)
            identity = m.entries[i] == i;
          ck.expect("index.identity", identity,
                    tag + " layer " + std::to_string(m.layer) + " is not identity routed");
        }
      }
    }

    if (cfg.variant == Variant::subset_selection) {
      const std::size_t pool_rank = cfg.equivalent_rank * L;
      ck.expect("scaling.count", lt.scaling.size() == L, tag + " needs one mask per block");
      for (std::size_t k = 0; k < lt.index_a.size(); ++k) {
        const auto& e = lt.index_a[k].entries;
        ck.expect("index.sorted_unique", std::adjacent_find(e.begin(), e.end(), std::greater_equal<>()) == e.end(),
                  tag + " layer " + std::to_string(k) + " selection not strictly increasing");
        if (k >= lt.scaling.size()) continue;
        const auto& mask = lt.scaling[k].mask;
        bool consistent = mask.size() == pool_rank &&
                          static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)) ==
                              cfg.rank;
        for (std::uint32_t idx : e) consistent = consistent && idx < mask.size() && mask[idx] == 1;
        ck.expect("mask.consistent", consistent,
                  tag + " layer " + std::to_string(k) + " mask disagrees with selection");
      }
    } else if (cfg.variant == Variant::random_scaling) {
      ck.expect("scaling.count", lt.scaling.size() == L, tag + " needs one scaling vector per block");
      for (const auto& sv : lt.scaling) {
        ck.expect("scaling.shape", sv.scalars.size() == cfg.rank && sv.mask.empty() &&
                                       all_finite(sv.scalars),
                  tag + " layer " + std::to_string(sv.layer) + " scalars malformed");
      }
    } else {
      ck.expect("scaling.count", lt.scaling.empty(), tag + " carries scalars/masks it cannot use");
    }
  }
  return report;
}

}  // namespace mos
