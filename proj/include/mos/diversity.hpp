#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <boost/multiprecision/cpp_int.hpp>

namespace mos {

using BigInt = boost::multiprecision::cpp_int;

// Routing schemes whose combinational diversity is counted.
enum class DiversityScheme {
  pure_sharing,
  subset_selection,
  pair_dissociation,
  vector_sharding,
};

std::string_view to_string(DiversityScheme s) noexcept;
std::optional<DiversityScheme> parse_diversity_scheme(std::string_view name) noexcept;

// Exact C(n, k); zero when k > n.
BigInt binomial(std::uint64_t n, std::uint64_t k);

struct DiversityReport {
  DiversityScheme scheme = DiversityScheme::pure_sharing;
  // Distinct low-rank pairs counted as unordered selections:
  //   pure 1, subset C(Le,r), dissociation C(Le,r)^2, sharding C(Lle,rl)^2.
  BigInt combinations;
  std::string formula;
  // Same pools with ordered, with-replacement index vectors:
  // (pool size)^(slots) per side. The routing tables in this library are
  // ordered, so this is the count they can actually address.
  BigInt ordered_combinations;
  std::string ordered_formula;
};

// Throws DomainError for zero arguments or r > Le.
DiversityReport diversity(DiversityScheme scheme, std::uint64_t num_blocks,
                          std::uint64_t equivalent_rank, std::uint64_t rank,
                          std::uint64_t shards_per_vector);

}  // namespace mos
