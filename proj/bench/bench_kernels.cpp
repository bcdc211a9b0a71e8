// Reference vs OpenMP kernels: wall time and bit-equality.
// Usage: bench_kernels [reps]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>
#include <vector>

#include "spdp/kernels.hpp"

namespace k = spdp::kernels;

namespace {

using Gemm = void (*)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*);

struct Case {
    const char* name;
    Gemm fast, ref;
    std::size_t m, n, k;
};

double time_ms(Gemm f, const Case& c, const std::vector<double>& a, const std::vector<double>& b, std::vector<double>& out,
               int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        std::fill(out.begin(), out.end(), 0.0);
        const auto t0 = std::chrono::steady_clock::now();
        f(c.m, c.n, c.k, a.data(), b.data(), out.data());
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
    const Case cases[] = {
        {"gemm_nn 64x64x64", k::gemm_nn, k::reference::gemm_nn, 64, 64, 64},
        {"gemm_nn 256x256x256", k::gemm_nn, k::reference::gemm_nn, 256, 256, 256},
        {"gemm_nt 512x64x256", k::gemm_nt, k::reference::gemm_nt, 512, 64, 256},
        {"gemm_tn 256x256x512", k::gemm_tn, k::reference::gemm_tn, 256, 256, 512},
        {"gemm_nn 96x1024x3072", k::gemm_nn, k::reference::gemm_nn, 96, 1024, 3072},
    };
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(0.0, 1.0);
    std::printf("threads %d, best of %d\n", k::max_threads(), reps);
    std::printf("%-24s %12s %12s %8s  %s\n", "kernel", "reference ms", "openmp ms", "speedup", "bits");
    int mismatches = 0;
    for (const Case& c : cases) {
        // A and B are sized for the largest layout any of the three variants reads.
        std::vector<double> a(std::max(c.m, c.k) * std::max(c.k, c.m)), b(std::max(c.k, c.n) * std::max(c.n, c.k) + c.k * c.n);
        for (auto& v : a) v = z(rng);
        for (auto& v : b) v = z(rng);
        std::vector<double> out_ref(c.m * c.n), out_fast(c.m * c.n);
        const double tr = time_ms(c.ref, c, a, b, out_ref, reps);
        const double tf = time_ms(c.fast, c, a, b, out_fast, reps);
        const bool same = std::memcmp(out_ref.data(), out_fast.data(), out_ref.size() * sizeof(double)) == 0;
        mismatches += !same;
        std::printf("%-24s %12.3f %12.3f %7.2fx  %s\n", c.name, tr, tf, tr / tf, same ? "identical" : "DIFFER");
    }
    return mismatches == 0 ? 0 : 1;
}
