#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gammabound/errors.hpp"

namespace gammabound {

/// Identifies a reproducible random stream. Equal (seed, stream) pairs
/// reproduce identical draw sequences; distinct stream labels decorrelate
/// sub-streams derived from the same seed.
struct RngSpec {
    std::uint64_t seed = 0;
    std::string stream = "default";

    RngSpec() = default;
    RngSpec(std::uint64_t s, std::string str) : seed(s), stream(std::move(str)) {}

    RngSpec fork(std::string_view child) const {
        return RngSpec{seed, stream + "/" + std::string(child)};
    }
};

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

// Draw-level wrapper around std::mt19937_64. The engine's output sequence is
// fixed by the standard; the distribution transforms below are hand-rolled
// (std::uniform_real_distribution et al. are not bit-portable).
class Rng {
public:
    explicit Rng(const RngSpec& spec) {
        const std::uint64_t h = detail::fnv1a64(spec.stream);
        std::seed_seq seq{
            static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
            static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
        engine_.seed(seq);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via polar Box-Muller (spare cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer on [0, n). Unbiased via rejection on the top range.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw InvalidArgument("uniform_index: n must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace gammabound
