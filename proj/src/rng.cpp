#include "uhdformer/rng.hpp"

#include <cmath>

#include "uhdformer/errors.hpp"

namespace uhd {

namespace {

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

uint64_t Rng::splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void Rng::reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
    has_cached_normal_ = false;
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return mean + stddev * cached_normal_;
    }
    // Box-Muller; u1 shifted away from 0 so the log stays finite.
    double u1 = 0.0;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return mean + stddev * r * std::cos(theta);
}

uint64_t Rng::next_below(uint64_t n) {
    if (n == 0) throw ContractError("next_below: n must be positive");
    // Rejection sampling over the largest multiple of n, so the result is
    // exactly uniform and the consumed stream is deterministic.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
}

Rng Rng::substream(uint64_t seed, uint64_t label) {
    uint64_t sm = seed;
    uint64_t mixed = splitmix64(sm) ^ label;
    return Rng(splitmix64(mixed));
}

Rng Rng::substream(uint64_t seed, std::initializer_list<uint64_t> labels) {
    uint64_t acc = seed;
    for (uint64_t label : labels) {
        uint64_t mixed = splitmix64(acc) ^ label;
        acc = splitmix64(mixed);
    }
    return Rng(acc);
}

Rng Rng::substream(uint64_t seed, std::string_view label) {
    return substream(seed, hash_label(label));
}

uint64_t Rng::hash_label(std::string_view label) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace uhd
