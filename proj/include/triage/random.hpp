#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

// Seeded draws that give the same results on every standard library:
// std::mt19937_64 is fully specified, the std distributions are not.
namespace triage::rng {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Per-item seed derived from a run seed and an item ordinal.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t ordinal) {
    return splitmix64(seed ^ splitmix64(ordinal + 1));
}

// Uniform integer in [0, bound) by rejection; bound must be > 0.
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t bound) {
    const std::uint64_t limit = Engine::max() - (Engine::max() % bound + 1) % bound;
    std::uint64_t x = eng();
    while (x > limit) x = eng();
    return x % bound;
}

template <typename T>
void shuffle(std::vector<T>& items, Engine& eng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(uniform_index(eng, i));
        std::swap(items[i - 1], items[j]);
    }
}

// Picks k distinct positions of [0, n) (partial Fisher-Yates); result is
// in draw order.
std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, Engine& eng);

// Largest-remainder (Hamilton) apportionment of `total` seats over groups
// with the given sizes. Ties on the remainder go to the lower group index.
std::vector<std::size_t> largest_remainder(const std::vector<std::size_t>& sizes, std::size_t total);

}  // namespace triage::rng
