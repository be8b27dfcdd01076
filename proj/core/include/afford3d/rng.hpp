#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>

namespace afford3d {

// splitmix64; used for seed derivation and word hashing.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_string(const std::string& s) {
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Deterministic RNG with hand-rolled distributions. std::* distributions are
// implementation-defined, which would break bit-reproducibility of
// checkpoints across standard libraries; the raw engine is portable.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed == 0 ? 0x952ef4d0c72f6eefull : seed) {}

    std::uint64_t next() {
        // xorshift* core seeded through splitmix
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching so the draw count per call is fixed.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0x1.0p-60) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

    std::string serialize() const {
        std::ostringstream os;
        os << state_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> state_;
    }

    // Independent child stream, e.g. one per dataset sample.
    Rng fork(std::uint64_t salt) const { return Rng(mix64(state_ ^ mix64(salt))); }

  private:
    std::uint64_t state_;
};

}  // namespace afford3d
