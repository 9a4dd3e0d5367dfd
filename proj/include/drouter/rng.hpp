#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace drouter {

/// Purposes that get their own independent random stream.
enum class StreamDomain : std::uint64_t {
    gate_noise = 1,
    shuffle = 2,
    init = 3,
    cohort_case = 4,
    cohort_split = 5,
    expert_labels = 6,
    embeddings = 7,
    reference_policy = 8,
    test = 99,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based stream: the n-th output is a pure function of
/// (seed, domain, a, b, n), so draws never depend on evaluation order.
/// Satisfies UniformRandomBitGenerator for use with <random> distributions.
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng(std::uint64_t seed, StreamDomain domain, std::uint64_t a = 0, std::uint64_t b = 0) noexcept
        : key_(splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(domain)) ^ a) ^
               splitmix64(b ^ 0xD1B54A32D192ED03ULL)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++); }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Logistic(0,1) draw via log U - log(1 - U).
    double logistic() noexcept {
        const double u = uniform_open();
        return std::log(u) - std::log1p(-u);
    }

    std::uint64_t counter() const noexcept { return counter_; }
    void seek(std::uint64_t counter) noexcept { counter_ = counter; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace drouter
