#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>

#include "erar/errors.hpp"

namespace erar {

/// SplitMix64 finalizer. Used to derive independent sub-stream seeds from a
/// root seed so that every source of randomness in the project is a pure
/// function of the integer seeds the caller supplied.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed for the `stream`-th child stream of `root`.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    return splitmix64(root ^ splitmix64(stream + 1));
}

/// Deterministic random source. All draws are defined algorithmically on top
/// of std::mt19937_64 so results reproduce across standard libraries:
///   uniform():     top 53 bits of one engine output, scaled by 2^-53
///   normal():      Box-Muller on two uniforms, second value cached
///   categorical(): inverse CDF with a single uniform
///   uniform_int(): floor(n * uniform())
/// std::<distribution> types are deliberately not used; their output is
/// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; consumes two uniforms per pair.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Guard u1 = 0; log(0) would produce -inf.
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    /// Integer in [0, n).
    int uniform_int(int n) {
        const int k = static_cast<int>(uniform() * n);
        return k < n ? k : n - 1;
    }

    /// Index sampled from an (unnormalized is not allowed) probability row.
    int categorical(std::span<const double> probs) {
        const double u = uniform();
        double cum = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    /// Engine + Box-Muller cache as text; load_state restores draw-for-draw.
    std::string save_state() const {
        std::ostringstream os;
        os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
        os.precision(17);
        os << spare_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        is >> gen_ >> flag >> spare_;
        if (!is) throw NumericError("Rng::load_state: malformed state string");
        has_spare_ = (flag != 0);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace erar
