#pragma once

#include <cstdint>
#include <random>

namespace amr {

// Hierarchical deterministic RNG. Keys are derived by hashing a parent key
// with an integer tag, so independent streams (dataset -> class -> sample ->
// noise) never depend on the draw order of their siblings.
struct RngKey {
    std::uint64_t v = 0;

    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

    static std::uint64_t mix(std::uint64_t x) {
        x += kGolden;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    RngKey child(std::uint64_t tag) const { return RngKey{mix(v ^ mix(tag))}; }
};

class Rng {
public:
    explicit Rng(RngKey key) : gen_(key.v) {}
    explicit Rng(std::uint64_t seed) : gen_(RngKey{seed}.child(0).v) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }

    // inclusive bounds
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
    }

    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }

    bool coin() { return uniform_int(0, 1) == 1; }

    template <class Container>
    auto choice(const Container& c) -> decltype(c[0]) {
        return c[static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(c.size()) - 1))];
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

} // namespace amr
