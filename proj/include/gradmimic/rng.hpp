#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gradmimic {

struct RngSeed {
    std::uint64_t value = 0;

    friend bool operator==(RngSeed, RngSeed) = default;
};

/// Hash a purpose tag into a child seed. Same (parent, tag) always gives the
/// same child, so each consumer gets an independent reproducible stream.
RngSeed derive_seed(RngSeed parent, std::string_view purpose);
RngSeed derive_seed(RngSeed parent, std::string_view purpose, std::uint64_t index);

/// Seeded generator with platform-independent draws.
///
/// std::mt19937_64's output sequence is fixed by the standard, but the
/// <random> distributions are not, so every distribution used here is
/// implemented on top of the raw 64-bit stream.
class Rng {
public:
    explicit Rng(RngSeed seed);
    Rng(RngSeed seed, std::string_view purpose) : Rng(derive_seed(seed, purpose)) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, bound). Throws InvalidArgument when bound == 0.
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal via Box-Muller (one value per call, the pair's twin is cached).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);
    /// k distinct indices from 0..n-1, in draw order. Throws InvalidArgument when k > n.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gradmimic
