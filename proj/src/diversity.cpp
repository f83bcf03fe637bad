#include "mos/diversity.hpp"

#include "mos/errors.hpp"

namespace mos {

std::string_view to_string(DiversityScheme s) noexcept {
  switch (s) {
    case DiversityScheme::pure_sharing: return "pure_sharing";
    case DiversityScheme::subset_selection: return "subset_selection";
    case DiversityScheme::pair_dissociation: return "pair_dissociation";
    case DiversityScheme::vector_sharding: return "vector_sharding";
  }
  return "unknown";
}

std::optional<DiversityScheme> parse_diversity_scheme(std::string_view name) noexcept {
  if (name == "pure" || name == "pure_sharing") return DiversityScheme::pure_sharing;
  if (name == "subset" || name == "subset_selection") return DiversityScheme::subset_selection;
  if (name == "dissociation" || name == "pair_dissociation") return DiversityScheme::pair_dissociation;
  if (name == "sharding" || name == "vector_sharding") return DiversityScheme::vector_sharding;
  return std::nullopt;
}

BigInt binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  if (k > n - k) k = n - k;
  BigInt acc = 1;
  // acc * (n - k + i) / i stays integral at every step.
  for (std::uint64_t i = 1; i <= k; ++i) {
    acc *= n - k + i;
    acc /= i;
  }
  return acc;
}

DiversityReport diversity(DiversityScheme scheme, std::uint64_t num_blocks,
                          std::uint64_t equivalent_rank, std::uint64_t rank,
                          std::uint64_t shards_per_vector) {
  const std::uint64_t L = num_blocks, e = equivalent_rank, r = rank, l = shards_per_vector;
  if (L == 0 || e == 0 || l == 0) throw DomainError("diversity: L, e and l must be positive");
  const std::uint64_t pool = L * e;

  DiversityReport out;
  out.scheme = scheme;
  if (scheme == DiversityScheme::pure_sharing) {
    out.combinations = 1;
    out.formula = "C(Le,Le) = 1";
    out.ordered_combinations = 1;
    out.ordered_formula = "1 (identity routing)";
    return out;
  }
  if (r == 0 || r > pool) {
    throw DomainError("diversity: need 1 <= r <= Le (r=" + std::to_string(r) +
                      ", Le=" + std::to_string(pool) + ")");
  }
  auto pow = [](std::uint64_t base, std::uint64_t exp) -> BigInt {
    return boost::multiprecision::pow(BigInt(base), static_cast<unsigned>(exp));
  };

  switch (scheme) {
    case DiversityScheme::subset_selection:
      out.combinations = binomial(pool, r);
      out.formula = "C(Le,r) = C(" + std::to_string(pool) + "," + std::to_string(r) + ")";
      out.ordered_combinations = pow(pool, r);
      out.ordered_formula = "(Le)^r";
      break;
    case DiversityScheme::pair_dissociation: {
      const BigInt one_side = binomial(pool, r);
      out.combinations = one_side * one_side;
      out.formula = "C(Le,r)^2 = C(" + std::to_string(pool) + "," + std::to_string(r) + ")^2";
      out.ordered_combinations = pow(pool, 2 * r);
      out.ordered_formula = "(Le)^(2r)";
      break;
    }
    case DiversityScheme::vector_sharding: {
      const BigInt one_side = binomial(pool * l, r * l);
      out.combinations = one_side * one_side;
      out.formula = "C(Lle,rl)^2 = C(" + std::to_string(pool * l) + "," + std::to_string(r * l) + ")^2";
      out.ordered_combinations = pow(pool * l, 2 * r * l);
      out.ordered_formula = "(Lle)^(2rl)";
      break;
    }
    case DiversityScheme::pure_sharing:
      break;
  }
  return out;
}

}  // namespace mos
