#pragma once

#include <cstdint>
#include <vector>

namespace quantlab {

// Deterministic counter-based generator (splitmix64). The 64-bit integer
// stream is bit-identical across platforms for a given seed; derived floats
// use fixed bit-to-mantissa mappings so tensors filled from the same seed
// are byte-identical run to run.
class RngState {
public:
    explicit RngState(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t seed() const { return seed_; }

    // Next raw 64-bit word of the stream.
    uint64_t next_u64();

    // Uniform in [0,1) with 53 random bits.
    double next_double();

    // Uniform in [0,1) with 24 random bits.
    float next_float();

    // Uniform in [lo,hi).
    float next_uniform(float lo, float hi);

    // Standard normal via Box-Muller; second value of each pair is cached.
    double next_normal();

    // Uniform integer in [0,n), rejection-sampled so there is no modulo bias.
    uint64_t next_below(uint64_t n);

private:
    uint64_t seed_;
    uint64_t state_;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

} // namespace quantlab
