// Times the OpenMP kernels against their serial references. Both compute each
// output element in the same order, so speed is the only difference.

#include <chrono>
#include <cstdio>
#include <vector>

#include "iocseq/common.hpp"
#include "iocseq/kernels.hpp"

using Clock = std::chrono::steady_clock;
namespace k = iocseq::nd::kernels;

namespace {

std::vector<float> random_buf(size_t n, uint64_t seed) {
    iocseq::SplitMix64 rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

template <typename Fn>
double time_ms(Fn&& fn, int reps) {
    fn();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps;
}

}  // namespace

int main() {
    std::printf("threads: %d\n", k::max_threads());
    std::printf("%-28s %10s %10s %8s\n", "kernel", "serial ms", "omp ms", "speedup");

    const struct {
        int64_t m, kk, n;
    } mm_sizes[] = {{64, 64, 64}, {256, 256, 256}, {512, 512, 512}, {1024, 256, 1024}};
    for (const auto& s : mm_sizes) {
        auto a = random_buf(static_cast<size_t>(s.m * s.kk), 1);
        auto b = random_buf(static_cast<size_t>(s.kk * s.n), 2);
        std::vector<float> c(static_cast<size_t>(s.m * s.n));
        const int reps = s.m >= 512 ? 3 : 10;
        const double t_serial =
            time_ms([&] { k::matmul_serial(a.data(), b.data(), c.data(), s.m, s.kk, s.n); }, reps);
        const double t_omp =
            time_ms([&] { k::matmul(a.data(), b.data(), c.data(), s.m, s.kk, s.n); }, reps);
        char label[64];
        std::snprintf(label, sizeof label, "matmul %lldx%lldx%lld", static_cast<long long>(s.m),
                      static_cast<long long>(s.kk), static_cast<long long>(s.n));
        std::printf("%-28s %10.3f %10.3f %7.2fx\n", label, t_serial, t_omp, t_serial / t_omp);
    }

    const struct {
        int64_t B, T, C, kk, F;
    } conv_sizes[] = {{32, 21, 35, 4, 32}, {256, 21, 35, 4, 32}, {256, 41, 131, 4, 64}};
    for (const auto& s : conv_sizes) {
        auto x = random_buf(static_cast<size_t>(s.B * s.T * s.C), 3);
        auto w = random_buf(static_cast<size_t>(s.kk * s.C * s.F), 4);
        auto bias = random_buf(static_cast<size_t>(s.F), 5);
        std::vector<float> y(static_cast<size_t>(s.B * (s.T - s.kk + 1) * s.F));
        const double t_serial = time_ms(
            [&] {
                k::conv1d_forward_serial(x.data(), w.data(), bias.data(), y.data(), s.B, s.T, s.C,
                                         s.kk, s.F);
            },
            5);
        const double t_omp = time_ms(
            [&] {
                k::conv1d_forward(x.data(), w.data(), bias.data(), y.data(), s.B, s.T, s.C, s.kk,
                                  s.F);
            },
            5);
        char label[64];
        std::snprintf(label, sizeof label, "conv1d B%lld T%lld C%lld F%lld",
                      static_cast<long long>(s.B), static_cast<long long>(s.T),
                      static_cast<long long>(s.C), static_cast<long long>(s.F));
        std::printf("%-28s %10.3f %10.3f %7.2fx\n", label, t_serial, t_omp, t_serial / t_omp);
    }
    return 0;
}
