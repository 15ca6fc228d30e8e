#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace maskboot {

// Seed derivation: every named sub-stream is seeded with
//   splitmix64(global_seed ^ fnv1a64(name))
// so adding or removing one stream never shifts the others.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// Thin wrapper over mt19937_64. Sampling helpers draw directly from the
// engine (no distribution objects with hidden caches) so the engine state is
// the complete stream state and round-trips through save()/load() bit-exactly.
class Rng {
public:
    Rng() : engine_(0) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [lo, hi] inclusive, unbiased (rejection sampling).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Standard normal via Box-Muller; consumes two draws, caches nothing.
    double normal();
    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    std::string save() const;
    void load(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace maskboot
