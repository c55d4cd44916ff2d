#ifndef CI_RANDOM_HPP_
#define CI_RANDOM_HPP_

#include <cstdint>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string_view>

#include "ci/vec3.hpp"

namespace ci {

// splitmix64, used for seeding and stream derivation.
inline std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Self-contained xoshiro256++ stream with our own distributions, so that
// outputs are identical across standard libraries and thread schedules.
// Substreams are derived by hashing (seed, label, ids); see RngStream::derive.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1).
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1].
    double uniform_pos() { return ((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (no cached spare, for stream determinism).
    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

    Vec3 uniform_sphere() {
        double z = uniform(-1.0, 1.0);
        double phi = uniform(0.0, 2.0 * M_PI);
        double s = std::sqrt(std::fmax(0.0, 1.0 - z * z));
        return {s * std::cos(phi), s * std::sin(phi), z};
    }

    // Uniform over the spherical cap of half-angle alpha about axis.
    Vec3 uniform_cone(const Vec3& axis, double cos_alpha) {
        double c = uniform(cos_alpha, 1.0);
        return from_cone_angles(axis, c, uniform(0.0, 2.0 * M_PI));
    }

    // Truncated standard normal on [lo, hi] by rejection; one-sided tail
    // sampling (Devroye) when the interval sits far out.
    double truncated_std_normal(double lo, double hi) {
        if (!(lo < hi)) throw std::invalid_argument("truncated_std_normal: empty interval");
        constexpr double kTail = 3.0;
        constexpr int kMaxAttempts = 100000;
        if (lo > kTail) return tail_sample(lo, hi);
        if (hi < -kTail) return -tail_sample(-hi, -lo);
        for (int i = 0; i < kMaxAttempts; ++i) {
            double x = normal();
            if (x >= lo && x <= hi) return x;
        }
        throw std::runtime_error("truncated_std_normal: rejection failed");
    }

    double truncated_normal(double mean, double sigma, double lo, double hi) {
        return mean + sigma * truncated_std_normal((lo - mean) / sigma, (hi - mean) / sigma);
    }

    // von Mises-Fisher on S^2 about mean direction (Wood's method).
    Vec3 vmf(const Vec3& mean, double kappa) {
        if (kappa <= 0.0) return uniform_sphere();
        double u = uniform();
        // w = 1 + log(u + (1-u) e^{-2k}) / k, computed stably for large k.
        double w = 1.0 + std::log1p(-(1.0 - u) * (1.0 - std::exp(-2.0 * kappa))) / kappa;
        return from_cone_angles(mean.normalized(), w, uniform(0.0, 2.0 * M_PI));
    }

    // Deterministic substream from (this stream's seed material, label, ids).
    RngStream derive(std::string_view label, std::uint64_t id0 = 0,
                     std::uint64_t id1 = 0) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](std::uint64_t v) {
            h ^= v;
            h *= 0x100000001b3ULL;
        };
        for (auto w : state_) mix(w);
        for (char c : label) mix(static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
        mix(id0);
        mix(id1);
        return RngStream(h);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    double tail_sample(double lo, double hi) {
        constexpr int kMaxAttempts = 100000;
        double c = lo * lo / 2.0;
        double f = std::expm1(c - hi * hi / 2.0);
        for (int i = 0; i < kMaxAttempts; ++i) {
            double out = c - std::log(1.0 + uniform() * f);
            double u = uniform();
            if (u * u * out < c) return std::sqrt(2.0 * out);
        }
        throw std::runtime_error("truncated_std_normal: tail sampling failed");
    }

    std::uint64_t state_[4];
};

// Standard normal pdf/cdf and truncated-normal log density helpers.
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// log N(x; mean, sigma) truncated to [lo, hi]; -inf outside.
inline double log_truncated_normal_pdf(double x, double mean, double sigma, double lo,
                                       double hi) {
    if (x < lo || x > hi || sigma <= 0.0) return -std::numeric_limits<double>::infinity();
    double z = (x - mean) / sigma;
    double mass = norm_cdf((hi - mean) / sigma) - norm_cdf((lo - mean) / sigma);
    if (mass <= 0.0) return -std::numeric_limits<double>::infinity();
    return -0.5 * z * z - std::log(sigma * std::sqrt(2.0 * M_PI)) - std::log(mass);
}

// log vMF density on S^2 per steradian: kappa/(4 pi sinh kappa) exp(kappa mu.x).
inline double log_vmf_pdf(const Vec3& x, const Vec3& mean, double kappa) {
    if (kappa <= 0.0) return -std::log(4.0 * M_PI);
    // log(kappa / (4 pi sinh kappa)) = log kappa - kappa - log1p(-e^{-2k}) + log 2 - log 4pi
    double log_norm = std::log(kappa) - kappa - std::log1p(-std::exp(-2.0 * kappa)) +
                      std::log(2.0) - std::log(4.0 * M_PI);
    return log_norm + kappa * mean.dot(x);
}

}  // namespace ci

#endif  // CI_RANDOM_HPP_
