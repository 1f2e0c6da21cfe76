#include "ursct/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "ursct/errors.hpp"

namespace ursct {

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 is kept away from 0 so log() stays finite.
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

double Rng::truncated_normal(double stddev) {
    for (;;) {
        const double z = normal();
        if (std::abs(z) <= 2.0) return z * stddev;
    }
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) return 0;
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_;
    if (have_spare_) {
        os << " 1 " << std::hexfloat << spare_;
    } else {
        os << " 0";
    }
    return os.str();
}

void Rng::deserialize(const std::string& blob) {
    std::istringstream is(blob);
    is >> engine_;
    int spare_flag = 0;
    is >> spare_flag;
    if (is.fail()) throw FormatError("rng state blob is malformed");
    if (spare_flag) {
        is >> std::hexfloat >> spare_;
        if (is.fail()) throw FormatError("rng state blob is malformed");
        have_spare_ = true;
    } else {
        have_spare_ = false;
    }
}

std::uint64_t Rng::mix(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace ursct
