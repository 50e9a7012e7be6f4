// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace bmcl {

// Deterministic RNG. mt19937_64 has a standardized sequence, and every
// distribution here is hand-rolled on top of it, so identical seeds give
// bit-identical streams on any platform (std::*_distribution does not
// guarantee that).
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Inclusive range, rejection sampling to avoid modulo bias.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return lo + static_cast<int>(x % span);
    }

    // Box-Muller, no cached spare (keeps the stream layout simple).
    double normal() {
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Marsaglia-Tsang for shape >= 1, boosted for shape < 1. Unit scale.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            const double u = 1.0 - uniform01();
            return g * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = 1.0 - uniform01();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (int i = static_cast<int>(xs.size()) - 1; i > 0; --i) {
            const int j = uniform_int(0, i);
            std::swap(xs[i], xs[static_cast<std::size_t>(j)]);
        }
    }

    // splitmix64 finalizer; derives independent substreams from one seed.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace bmcl
