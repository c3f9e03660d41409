#pragma once
// Seeded random streams. Every consumer derives its own stream from a root
// seed plus a purpose tag and an index, so adding workers or reordering
// independent consumers never changes what any one of them draws.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace hiervid {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t v);

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);
inline Rng make_rng(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0) {
    return Rng(derive_seed(root, purpose, index));
}

double uniform(Rng& rng, double lo, double hi);
double normal(Rng& rng, double mean, double stddev);
/// Inclusive range [lo, hi].
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);
bool bernoulli(Rng& rng, double p);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace hiervid
