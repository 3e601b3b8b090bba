#pragma once

#include <cstdint>
#include <random>

namespace cosgate {

/// SplitMix64 finalizer. Used to turn (seed, counter) pairs into well-mixed seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed of child stream `stream` under `master`:
///   splitmix64(splitmix64(master) ^ splitmix64(stream + 0x9E3779B97F4A7C15)).
/// Distinct stream ids give distinct, reproducible seeds; no generator state is shared.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// mt19937_64 with platform-independent sampling helpers.
///
/// std::uniform_real_distribution and friends are implementation-defined, so
/// uniform and normal draws are built directly from the raw 64-bit output.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Child generator for stream `stream`, see derive_seed.
    static Rng stream(std::uint64_t master, std::uint64_t stream) { return Rng(derive_seed(master, stream)); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller; caches the second variate.
    double normal();

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cosgate
