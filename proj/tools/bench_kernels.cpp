// Copyright (c) 2026 the bmcl authors
// SPDX-License-Identifier: Apache-2.0
//
// Times the OpenMP kernels against the serial reference implementations and
// verifies that both produce identical bits.
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bmcl/kernels.hpp"
#include "bmcl/rng.hpp"

namespace {

using bmcl::DetRng;
using bmcl::Tensor;

Tensor random_tensor(int rows, int cols, DetRng& rng) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

template <typename F>
double time_ms(F f, int reps) {
    // One warmup, then the best of `reps` runs.
    f();
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void report(const std::string& name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-24s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   bits %s\n",
                name.c_str(), serial_ms, parallel_ms, serial_ms / parallel_ms,
                identical ? "equal" : "DIFFER");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("openmp disabled; parallel entry points fall through to serial code\n");
#endif
    DetRng rng(42);
    const int reps = 5;

    for (const int n : {128, 256, 512}) {
        const Tensor a = random_tensor(n, n, rng);
        const Tensor b = random_tensor(n, n, rng);
        Tensor out_s, out_p;
        const double ts = time_ms([&] { out_s = bmcl::kern::serial::matmul(a, b); }, reps);
        const double tp = time_ms([&] { out_p = bmcl::kern::matmul(a, b); }, reps);
        report("matmul " + std::to_string(n), ts, tp, out_s.vec() == out_p.vec());
    }

    {
        const Tensor a = random_tensor(2048, 512, rng);
        Tensor out_s, out_p;
        const double ts = time_ms([&] { out_s = bmcl::kern::serial::sigmoid(a); }, reps);
        const double tp = time_ms([&] { out_p = bmcl::kern::sigmoid(a); }, reps);
        report("sigmoid 2048x512", ts, tp, out_s.vec() == out_p.vec());
    }
    {
        const Tensor a = random_tensor(2048, 512, rng);
        const Tensor b = random_tensor(2048, 512, rng);
        Tensor out_s, out_p;
        const double ts = time_ms([&] { out_s = bmcl::kern::serial::mul(a, b); }, reps);
        const double tp = time_ms([&] { out_p = bmcl::kern::mul(a, b); }, reps);
        report("mul 2048x512", ts, tp, out_s.vec() == out_p.vec());
    }
    {
        const Tensor z = random_tensor(4096, 128, rng);
        Tensor out_s, out_p;
        const double ts = time_ms([&] { out_s = bmcl::kern::serial::row_softmax(z); }, reps);
        const double tp = time_ms([&] { out_p = bmcl::kern::row_softmax(z); }, reps);
        report("row_softmax 4096x128", ts, tp, out_s.vec() == out_p.vec());
    }
    {
        const Tensor z = random_tensor(4096, 128, rng);
        Tensor t(4096, 128);
        for (int i = 0; i < t.rows(); ++i) t.at(i, i % t.cols()) = 1.0;
        Tensor out_s, out_p;
        const double ts =
            time_ms([&] { out_s = bmcl::kern::serial::cross_entropy_rows(z, t); }, reps);
        const double tp = time_ms([&] { out_p = bmcl::kern::cross_entropy_rows(z, t); }, reps);
        report("cross_entropy 4096x128", ts, tp, out_s.vec() == out_p.vec());
    }
    return 0;
}
