#pragma once

// Seeded randomness. A run seed determines every draw; path i always uses the
// generator seeded with path_seed(seed, i), so a path is reproduced exactly no
// matter how many paths are run or how they are split across threads.

#include <cstdint>
#include <random>

namespace forest {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Splitting rule: splitmix64(seed XOR splitmix64(path_index)).
constexpr std::uint64_t path_seed(std::uint64_t seed, std::uint64_t path_index) noexcept {
    return splitmix64(seed ^ splitmix64(path_index));
}

class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return normal_(engine_); }

    template <typename It>
    void fill(It first, It last) {
        for (; first != last; ++first) *first = normal_(engine_);
    }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace forest
