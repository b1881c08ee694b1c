#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace midas {

/// Independent random streams derived from one seed. Adding draws to one
/// consumer never shifts the values another consumer sees.
enum class Stream : std::uint64_t {
    ModeSelection = 1,
    FiberSampling = 2,
    Init = 3,
    Noise = 4,
    Bins = 5,
    Probe = 6,
    SynthFactors = 7,
};

/// Counter-based generator: value k of stream s is splitmix64(key(seed, s) + k * phi).
/// Satisfies UniformRandomBitGenerator.
class CounterRng {
public:
    using result_type = std::uint64_t;

    CounterRng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0)
        : key_(mix(seed ^ mix(static_cast<std::uint64_t>(stream) * 0xD1B54A32D192ED03ULL + substream))) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

    std::uint64_t counter() const { return counter_; }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), unbiased.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index over empty range");
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = max() - (max() % bound);
        std::uint64_t x;
        do {
            x = (*this)();
        } while (x >= limit);
        return static_cast<std::size_t>(x % bound);
    }

    /// Standard normal via Box-Muller (one value per call).
    double normal() {
        double u1;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// `k` distinct values from [0, n) in ascending order (Floyd's algorithm).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("cannot sample more items than the population");
        std::vector<std::size_t> out;
        out.reserve(k);
        if (k == n) {
            for (std::size_t i = 0; i < n; ++i) out.push_back(i);
            return out;
        }
        std::unordered_set<std::size_t> chosen;
        chosen.reserve(k * 2);
        for (std::size_t j = n - k; j < n; ++j) {
            const std::size_t v = uniform_index(j + 1);
            if (!chosen.insert(v).second) chosen.insert(j);
        }
        out.assign(chosen.begin(), chosen.end());
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Fisher-Yates permutation of [0, n).
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(i)]);
        return p;
    }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace midas
