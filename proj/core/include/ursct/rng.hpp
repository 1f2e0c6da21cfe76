#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ursct {

// Deterministic RNG built on std::mt19937_64 (whose output sequence is fully
// specified by the standard). All distributions are implemented here rather
// than with std:: distribution objects, so draw sequences are stable across
// standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of randomness.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal();

    // Normal(0, stddev) resampled until |z| <= 2*stddev.
    double truncated_normal(double stddev);

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Engine state as a portable ASCII blob (and back), for checkpointing.
    std::string serialize() const;
    void deserialize(const std::string& blob);

    // Stream-splitting helper so independent consumers (shuffling, per-cell
    // ablation runs) do not perturb the main draw sequence.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ursct
