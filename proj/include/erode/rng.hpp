#pragma once

#include <array>
#include <cstdint>

namespace erode {

// Counter-based random numbers built on Philox4x32-10 (Salmon et al., 2011).
//
// Every random quantity in the workbench is a pure function of
// (key, counter): the 64-bit key identifies the logical stream (user seed
// mixed with a purpose tag) and the 128-bit counter addresses a draw inside
// the stream. There is no hidden state, so draws are reproducible across
// platforms, thread counts and call orders.

// One Philox4x32 block: 4x32-bit counter, 2x32-bit key, 10 rounds.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// 64-bit mixer (splitmix64 finalizer). Used to derive child seeds from a
// parent seed plus a tag, e.g. per-example or per-member attack seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b);

// Sequential view over one (key, stream) pair. The stream coordinates map
// onto the Philox counter words; `index` advances one word per block of four
// 32-bit outputs. Copyable value type.
class CounterRng {
public:
    CounterRng(std::uint64_t key, std::uint32_t stream_hi, std::uint32_t stream_lo);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01();
    // Uniform double in [lo, hi); degenerate lo == hi returns lo exactly.
    double uniform(double lo, double hi);
    // 1.0 with probability p, else 0.0.
    double bernoulli(double p);
    // Standard normal via Box-Muller (consumes two uniforms per pair).
    double normal();
    // Uniform integer in [0, n), n > 0.
    std::uint64_t below(std::uint64_t n);

private:
    void refill();

    std::array<std::uint32_t, 2> key_;
    std::uint32_t stream_hi_, stream_lo_;
    std::uint64_t index_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int cursor_ = 4;  // exhausted
    bool have_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

}  // namespace erode
