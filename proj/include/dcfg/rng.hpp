#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dcfg {

/// SplitMix64 in counter form.
///
/// The i-th draw (i = 1, 2, ...) of a generator with key `k` is
///   mix64(k + i * 0x9E3779B97F4A7C15)
/// where mix64 is the SplitMix64 finaliser:
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z =  z ^ (z >> 31)
/// uniform() uses the top 53 bits: (u64 >> 11) * 2^-53, in [0, 1).
/// normal() is one Box-Muller draw from two consecutive uniforms,
///   sqrt(-2 ln(1 - u1)) * cos(2 pi u2).
/// split(s) derives an independent stream keyed mix64(k ^ mix64(s + 0x9E3779B97F4A7C15)).
/// Everything here is integer arithmetic or IEEE double, so any
/// implementation following these lines reproduces the same streams.
class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

    static constexpr std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(key_ + counter_ * kGamma);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Modulo bias is below 2^-40 for the n used here.
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    CounterRng split(std::uint64_t stream) const { return CounterRng(mix64(key_ ^ mix64(stream + kGamma))); }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace dcfg
