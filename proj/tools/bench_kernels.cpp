// Compares the serial reference kernels against the OpenMP variants on
// transformer-shaped workloads. Usage: bench_kernels [reps]
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "mtnat/kernels.hpp"
#include "mtnat/rng.hpp"

using namespace mtnat;
namespace k = mtnat::kernels;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
    double best = 1e30;
    for (int i = 0; i < reps; ++i) {
        const double t0 = now_s();
        fn();
        best = std::min(best, now_s() - t0);
    }
    return best;
}

void report(const std::string& name, double flops, double t_serial, double t_omp) {
    std::printf("%-34s serial %8.3f ms (%6.2f GF/s)   omp %8.3f ms (%6.2f GF/s)   speedup %.2fx\n",
                name.c_str(), t_serial * 1e3, flops / t_serial * 1e-9, t_omp * 1e3,
                flops / t_omp * 1e-9, t_serial / t_omp);
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    Rng rng(1234);

    std::printf("threads: %d (openmp %s)\n\n", k::thread_count(),
                k::openmp_compiled() ? "on" : "off");

    struct MatShape {
        std::size_t batch, m, kk, n;
        bool shared_b;
        const char* label;
    };
    const MatShape shapes[] = {
        {16, 10, 64, 64, true, "proj B=16 T=10 d=64"},
        {64, 10, 16, 10, false, "attn scores B*H=64 T=10 dh=16"},
        {16, 12, 64, 256, true, "logits B=16 T=12 d=64 V=256"},
        {1, 512, 512, 512, false, "square 512"},
    };

    for (const auto& s : shapes) {
        std::vector<double> a(s.batch * s.m * s.kk), b((s.shared_b ? 1 : s.batch) * s.kk * s.n),
            c(s.batch * s.m * s.n);
        for (auto& x : a) x = rng.uniform(-1, 1);
        for (auto& x : b) x = rng.uniform(-1, 1);
        const double flops = 2.0 * s.batch * s.m * s.kk * s.n;
        const double ts = time_best_of(reps, [&] {
            k::serial::matmul_nn(a.data(), b.data(), c.data(), s.batch, s.m, s.kk, s.n,
                                 s.shared_b, false);
        });
        const double to = time_best_of(reps, [&] {
            k::omp::matmul_nn(a.data(), b.data(), c.data(), s.batch, s.m, s.kk, s.n, s.shared_b,
                              false);
        });
        report(std::string("matmul_nn ") + s.label, flops, ts, to);
    }

    {
        const std::size_t outer = 64 * 10, n = 10, inner = 1;
        std::vector<double> x(outer * n * inner), y(x.size());
        for (auto& v : x) v = rng.uniform(-5, 5);
        const double flops = 4.0 * x.size();
        const double ts = time_best_of(
            reps, [&] { k::serial::softmax_lanes(x.data(), y.data(), outer, n, inner); });
        const double to =
            time_best_of(reps, [&] { k::omp::softmax_lanes(x.data(), y.data(), outer, n, inner); });
        report("softmax 640 lanes of 10", flops, ts, to);
    }

    {
        const std::size_t rows = 16 * 10, n = 64;
        std::vector<double> x(rows * n), gamma(n, 1.0), beta(n, 0.0), y(rows * n), mean(rows),
            rstd(rows);
        for (auto& v : x) v = rng.uniform(-1, 1);
        const double flops = 8.0 * rows * n;
        const double ts = time_best_of(reps, [&] {
            k::serial::layernorm(x.data(), gamma.data(), beta.data(), 1e-5, y.data(),
                                 mean.data(), rstd.data(), rows, n);
        });
        const double to = time_best_of(reps, [&] {
            k::omp::layernorm(x.data(), gamma.data(), beta.data(), 1e-5, y.data(), mean.data(),
                              rstd.data(), rows, n);
        });
        report("layernorm 160x64", flops, ts, to);
    }

    return 0;
}
