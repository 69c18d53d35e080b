#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "entcell/util.h"

namespace entcell {

// splitmix64 stream. Hand-rolled so the same seed yields the same bytes on
// every platform and standard library.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Box-Muller, one fresh pair per call (no cached state).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Independent child stream tied to a label.
    Rng fork(const std::string & label) const {
        return Rng(fnv1a64(label, state_ ^ 0x5851f42d4c957f2dull));
    }

    std::vector<double> gaussian_vec(size_t n) {
        std::vector<double> v(n);
        for (auto & x : v) x = normal();
        return v;
    }

    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t state_;
};

} // namespace entcell
