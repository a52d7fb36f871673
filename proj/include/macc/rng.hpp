#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace macc {

// Counter-based pseudo-random stream (splitmix64 finalizer over key+counter).
// Equal seeds give bit-identical sequences no matter which module consumes
// them or how many workers are running. Streams are never shared between
// workers; each work item derives its own substream from stable ids.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : key_(finalize(seed + kSeedSalt)) {}

    // Independent stream keyed by (this stream, id). Chain calls to derive
    // from several ids, e.g. rng.substream(task_id).substream(iteration).
    RngStream substream(std::uint64_t id) const {
        RngStream s(0);
        s.key_ = finalize(key_ ^ (kDeriveSalt * (id + 1)));
        s.ctr_ = 0;
        return s;
    }

    std::uint64_t next_u64() {
        ctr_ += kGamma;
        return finalize(key_ ^ ctr_);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes exactly two draws per call.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased-enough index draw via 128-bit multiply-shift.
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    std::vector<std::uint32_t> permutation(std::size_t n) {
        std::vector<std::uint32_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kSeedSalt = 0x5851F42D4C957F2DULL;
    static constexpr std::uint64_t kDeriveSalt = 0xA0761D6478BD642FULL;

    static std::uint64_t finalize(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
};

}  // namespace macc
