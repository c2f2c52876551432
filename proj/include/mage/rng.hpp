#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mage {

// Counter-based RNG: draw i of stream (seed) is a pure hash of (seed, counter).
// Streams derived with fork() use domain-separated keys so they never collide
// with the parent or with sibling streams. Identical (seed, counter) gives the
// same sequence on every platform.
class RngStream {
  public:
    RngStream() : seed_(0), counter_(0) {}
    explicit RngStream(uint64_t seed, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) { counter_ = c; }

    // Child stream keyed by (key) — used for per-batch-element / per-purpose streams.
    RngStream fork(uint64_t key) const { return RngStream(mix(seed_ ^ mix(key ^ 0xa0761d6478bd642fULL))); }
    RngStream fork(std::string_view name) const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : name) h = (h ^ static_cast<uint8_t>(c)) * 0x100000001b3ULL;
        return fork(h);
    }

    uint64_t next_u64() { return mix(seed_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

    // Uniform in [0, 1).
    float uniform() { return static_cast<float>((next_u64() >> 40) * (1.0 / 16777216.0)); }

    // Uniform in (0, 1) — safe under log().
    double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0); }

    // Standard normal via Box-Muller (uses two draws per call; no state carried).
    float normal() {
        double u1 = uniform_open();
        double u2 = uniform_open();
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2));
    }

    // Uniform integer in [0, n). n must be > 0.
    uint32_t below(uint32_t n) {
        // 64-bit multiply-shift; bias is < 2^-32, irrelevant at our draw counts.
        return static_cast<uint32_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

  private:
    static uint64_t mix(uint64_t x) {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    uint64_t seed_;
    uint64_t counter_;
};

// Fisher-Yates shuffle of [0..n) index vector.
template <class Vec>
void shuffle_indices(Vec& idx, RngStream& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        size_t j = rng.below(static_cast<uint32_t>(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

} // namespace mage
