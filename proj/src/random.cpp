#include "triage/random.hpp"

#include <algorithm>
#include <numeric>

namespace triage::rng {

std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, Engine& eng) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
        auto j = i + static_cast<std::size_t>(uniform_index(eng, n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

__extension__ typedef unsigned __int128 u128;

std::vector<std::size_t> largest_remainder(const std::vector<std::size_t>& sizes, std::size_t total) {
    const std::size_t population = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    std::vector<std::size_t> seats(sizes.size(), 0);
    if (population == 0) return seats;
    std::vector<std::size_t> remainders(sizes.size());
    std::size_t given = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        // Exact integer quota: total * size / population.
        const auto num = static_cast<u128>(total) * sizes[i];
        seats[i] = static_cast<std::size_t>(num / population);
        remainders[i] = static_cast<std::size_t>(num % population);
        given += seats[i];
    }
    std::vector<std::size_t> order(sizes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t i = 0; given < total && i < order.size(); ++i, ++given) ++seats[order[i]];
    return seats;
}

}  // namespace triage::rng
