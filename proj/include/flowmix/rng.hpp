#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace flowmix {

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view s);

/// Deterministic named substream derived from a single root seed. Each
/// component (data / init / mix / corruption) draws from its own stream, so
/// changing one consumer's draw pattern does not perturb the others.
std::mt19937_64 substream(std::uint64_t root_seed, std::string_view name);

/// Uniform draw in [0, 1).
double uniform01(std::mt19937_64& rng);

/// Fisher-Yates permutation of {0, ..., n-1}.
std::vector<std::int64_t> random_permutation(std::int64_t n, std::mt19937_64& rng);

}  // namespace flowmix
