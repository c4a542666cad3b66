#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "iocseq/common.hpp"
#include "iocseq/kernels.hpp"

namespace k = iocseq::nd::kernels;
using iocseq::SplitMix64;

namespace {

std::vector<float> random_buf(size_t n, uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

}  // namespace

TEST_CASE("matmul matches a float64 naive product") {
    const int64_t m = 7, kk = 5, n = 6;
    auto a = random_buf(static_cast<size_t>(m * kk), 1);
    auto b = random_buf(static_cast<size_t>(kk * n), 2);
    std::vector<float> c(static_cast<size_t>(m * n));
    k::matmul(a.data(), b.data(), c.data(), m, kk, n);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0;
            for (int64_t p = 0; p < kk; ++p) acc += static_cast<double>(a[static_cast<size_t>(i * kk + p)]) * b[static_cast<size_t>(p * n + j)];
            CHECK(c[static_cast<size_t>(i * n + j)] == doctest::Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("transposed variants match the naive definition") {
    const int64_t m = 5, kk = 4, n = 3;
    auto a = random_buf(static_cast<size_t>(m * kk), 3);   // (m,k)
    auto bt = random_buf(static_cast<size_t>(n * kk), 4);  // (n,k)
    std::vector<float> c(static_cast<size_t>(m * n));
    k::matmul_bt(a.data(), bt.data(), c.data(), m, kk, n);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0;
            for (int64_t p = 0; p < kk; ++p) acc += static_cast<double>(a[static_cast<size_t>(i * kk + p)]) * bt[static_cast<size_t>(j * kk + p)];
            CHECK(c[static_cast<size_t>(i * n + j)] == doctest::Approx(acc).epsilon(1e-5));
        }

    auto at = random_buf(static_cast<size_t>(kk * m), 5);  // (k,m)
    auto b = random_buf(static_cast<size_t>(kk * n), 6);   // (k,n)
    k::matmul_at(at.data(), b.data(), c.data(), m, kk, n);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0;
            for (int64_t p = 0; p < kk; ++p) acc += static_cast<double>(at[static_cast<size_t>(p * m + i)]) * b[static_cast<size_t>(p * n + j)];
            CHECK(c[static_cast<size_t>(i * n + j)] == doctest::Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
    // same per-element accumulation order, so equality is exact
    for (uint64_t seed = 0; seed < 4; ++seed) {
        SplitMix64 rng(seed);
        const int64_t m = 33 + static_cast<int64_t>(rng.below(200));
        const int64_t kk = 17 + static_cast<int64_t>(rng.below(100));
        const int64_t n = 9 + static_cast<int64_t>(rng.below(150));
        auto a = random_buf(static_cast<size_t>(m * kk), seed * 10 + 1);
        auto b = random_buf(static_cast<size_t>(kk * n), seed * 10 + 2);
        std::vector<float> c1(static_cast<size_t>(m * n)), c2(c1);
        k::matmul(a.data(), b.data(), c1.data(), m, kk, n);
        k::matmul_serial(a.data(), b.data(), c2.data(), m, kk, n);
        CHECK(c1 == c2);

        auto bt = random_buf(static_cast<size_t>(n * kk), seed * 10 + 3);
        k::matmul_bt(a.data(), bt.data(), c1.data(), m, kk, n);
        k::matmul_bt_serial(a.data(), bt.data(), c2.data(), m, kk, n);
        CHECK(c1 == c2);

        auto at = random_buf(static_cast<size_t>(kk * m), seed * 10 + 4);
        k::matmul_at(at.data(), b.data(), c1.data(), m, kk, n);
        k::matmul_at_serial(at.data(), b.data(), c2.data(), m, kk, n);
        CHECK(c1 == c2);
    }
}

TEST_CASE("conv1d parallel/serial parity and output length") {
    const int64_t B = 96, T = 21, C = 8, kk = 4, F = 6;
    auto x = random_buf(static_cast<size_t>(B * T * C), 7);
    auto w = random_buf(static_cast<size_t>(kk * C * F), 8);
    auto bias = random_buf(static_cast<size_t>(F), 9);
    const int64_t To = T - kk + 1;
    CHECK(To == 18);  // length 21, kernel 4, valid padding
    std::vector<float> y1(static_cast<size_t>(B * To * F)), y2(y1);
    k::conv1d_forward(x.data(), w.data(), bias.data(), y1.data(), B, T, C, kk, F);
    k::conv1d_forward_serial(x.data(), w.data(), bias.data(), y2.data(), B, T, C, kk, F);
    CHECK(y1 == y2);

    auto dy = random_buf(static_cast<size_t>(B * To * F), 10);
    std::vector<float> dx1(static_cast<size_t>(B * T * C)), dx2(dx1);
    k::conv1d_dx(dy.data(), w.data(), dx1.data(), B, T, C, kk, F);
    k::conv1d_dx_serial(dy.data(), w.data(), dx2.data(), B, T, C, kk, F);
    CHECK(dx1 == dx2);

    std::vector<float> dw1(static_cast<size_t>(kk * C * F)), dw2(dw1);
    std::vector<float> db1(static_cast<size_t>(F)), db2(db1);
    k::conv1d_dw(x.data(), dy.data(), dw1.data(), db1.data(), B, T, C, kk, F);
    k::conv1d_dw_serial(x.data(), dy.data(), dw2.data(), db2.data(), B, T, C, kk, F);
    CHECK(dw1 == dw2);
    CHECK(db1 == db2);
}
