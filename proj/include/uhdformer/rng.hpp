#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace uhd {

// xoshiro256++ generator (Blackman/Vigna). State is seeded through a
// splitmix64 chain so any 64-bit seed yields a well-mixed 256-bit state.
// Instances are cheap value types; do not share one across threads, derive
// substreams instead.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed);

    // Next raw 64-bit output of the reference algorithm.
    uint64_t next_u64();

    // Uniform double in [0, 1) using the top 53 bits.
    double next_double();

    // Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Standard normal via Box-Muller; consumes two outputs per pair and
    // caches the second, so draws stay reproducible.
    double normal(double mean = 0.0, double stddev = 1.0);

    // Uniform integer in [0, n). n must be positive.
    uint64_t next_below(uint64_t n);

    // splitmix64 single step, also used for substream label mixing.
    static uint64_t splitmix64(uint64_t& state);

    // Derives an independent stream from (seed, label). The label is folded
    // into the seed with splitmix64 so distinct labels give distinct streams.
    static Rng substream(uint64_t seed, uint64_t label);
    static Rng substream(uint64_t seed, std::initializer_list<uint64_t> labels);
    static Rng substream(uint64_t seed, std::string_view label);

    // FNV-1a hash of a string, for string-labelled substreams.
    static uint64_t hash_label(std::string_view label);

private:
    uint64_t s_[4] = {0, 0, 0, 0};
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace uhd
