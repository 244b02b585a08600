#include "erode/rng.hpp"

#include <cmath>

namespace erode {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    return mix64(mix64(base) ^ mix64(tag + 0x1234567ull));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b) {
    return derive_seed(derive_seed(base, tag_a), tag_b);
}

CounterRng::CounterRng(std::uint64_t key, std::uint32_t stream_hi, std::uint32_t stream_lo)
    : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
      stream_hi_(stream_hi),
      stream_lo_(stream_lo) {}

void CounterRng::refill() {
    block_ = philox4x32({static_cast<std::uint32_t>(index_),
                         static_cast<std::uint32_t>(index_ >> 32),
                         stream_lo_, stream_hi_},
                        key_);
    ++index_;
    cursor_ = 0;
}

std::uint32_t CounterRng::next_u32() {
    if (cursor_ >= 4) refill();
    return block_[cursor_++];
}

std::uint64_t CounterRng::next_u64() {
    std::uint64_t lo = next_u32();
    std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
}

double CounterRng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return lo + (hi - lo) * uniform01();
}

double CounterRng::bernoulli(double p) {
    return uniform01() < p ? 1.0 : 0.0;
}

double CounterRng::normal() {
    if (have_spare_normal_) {
        have_spare_normal_ = false;
        return spare_normal_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 == 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_normal_ = r * std::sin(a);
    have_spare_normal_ = true;
    return r * std::cos(a);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
    // Rejection sampling keeps the distribution exactly uniform.
    std::uint64_t threshold = (0ull - n) % n;
    for (;;) {
        std::uint64_t v = next_u64();
        if (v >= threshold) return v % n;
    }
}

}  // namespace erode
