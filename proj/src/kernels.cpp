#include "iocseq/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace iocseq::nd::kernels {

namespace {
std::atomic<bool> g_parallel{true};
// below this many multiply-adds a parallel region costs more than it saves
constexpr int64_t kParallelCutoff = 16 * 1024;
}  // namespace

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------------------
// matmul family. Each C element is accumulated serially by one thread.
// ---------------------------------------------------------------------------

void matmul_serial(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        float* ci = c + i * n;
        std::memset(ci, 0, sizeof(float) * static_cast<size_t>(n));
        const float* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float av = ai[p];
            const float* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    const bool par = g_parallel.load() && m > 1 && m * k * n >= kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        float* ci = c + i * n;
        std::memset(ci, 0, sizeof(float) * static_cast<size_t>(n));
        const float* ai = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float av = ai[p];
            const float* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_bt_serial(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const float* bj = b + j * k;
            float acc = 0.0f;
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void matmul_bt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    const bool par = g_parallel.load() && m > 1 && m * k * n >= kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const float* bj = b + j * k;
            float acc = 0.0f;
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void matmul_at_serial(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    // a is (k,m) row-major, c[i,j] = sum_p a[p,i] * b[p,j]
    for (int64_t i = 0; i < m; ++i) {
        float* ci = c + i * n;
        std::memset(ci, 0, sizeof(float) * static_cast<size_t>(n));
        for (int64_t p = 0; p < k; ++p) {
            const float av = a[p * m + i];
            const float* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_at(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n) {
    const bool par = g_parallel.load() && m > 1 && m * k * n >= kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t i = 0; i < m; ++i) {
        float* ci = c + i * n;
        std::memset(ci, 0, sizeof(float) * static_cast<size_t>(n));
        for (int64_t p = 0; p < k; ++p) {
            const float av = a[p * m + i];
            const float* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// ---------------------------------------------------------------------------
// conv1d family
// ---------------------------------------------------------------------------

void conv1d_forward_serial(const float* x, const float* w, const float* bias, float* y,
                           int64_t B, int64_t T, int64_t C, int64_t k, int64_t F) {
    const int64_t To = T - k + 1;
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t t = 0; t < To; ++t) {
            float* yt = y + (bi * To + t) * F;
            for (int64_t f = 0; f < F; ++f) yt[f] = bias ? bias[f] : 0.0f;
            for (int64_t q = 0; q < k; ++q) {
                const float* xt = x + (bi * T + t + q) * C;
                const float* wq = w + q * C * F;
                for (int64_t c = 0; c < C; ++c) {
                    const float xv = xt[c];
                    const float* wc = wq + c * F;
                    for (int64_t f = 0; f < F; ++f) yt[f] += xv * wc[f];
                }
            }
        }
    }
}

void conv1d_forward(const float* x, const float* w, const float* bias, float* y,
                    int64_t B, int64_t T, int64_t C, int64_t k, int64_t F) {
    const int64_t To = T - k + 1;
    const bool par = g_parallel.load() && B >= 64 && B * To * k * C * F >= kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t t = 0; t < To; ++t) {
            float* yt = y + (bi * To + t) * F;
            for (int64_t f = 0; f < F; ++f) yt[f] = bias ? bias[f] : 0.0f;
            for (int64_t q = 0; q < k; ++q) {
                const float* xt = x + (bi * T + t + q) * C;
                const float* wq = w + q * C * F;
                for (int64_t c = 0; c < C; ++c) {
                    const float xv = xt[c];
                    const float* wc = wq + c * F;
                    for (int64_t f = 0; f < F; ++f) yt[f] += xv * wc[f];
                }
            }
        }
    }
}

void conv1d_dx_serial(const float* dy, const float* w, float* dx,
                      int64_t B, int64_t T, int64_t C, int64_t k, int64_t F) {
    const int64_t To = T - k + 1;
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t t = 0; t < T; ++t) {
            float* dxt = dx + (bi * T + t) * C;
            std::memset(dxt, 0, sizeof(float) * static_cast<size_t>(C));
            const int64_t plo = std::max<int64_t>(0, t - k + 1);
            const int64_t phi = std::min<int64_t>(To - 1, t);
            for (int64_t p = plo; p <= phi; ++p) {
                const float* dyp = dy + (bi * To + p) * F;
                const float* wq = w + (t - p) * C * F;
                for (int64_t c = 0; c < C; ++c) {
                    const float* wc = wq + c * F;
                    float acc = 0.0f;
                    for (int64_t f = 0; f < F; ++f) acc += dyp[f] * wc[f];
                    dxt[c] += acc;
                }
            }
        }
    }
}

void conv1d_dx(const float* dy, const float* w, float* dx,
               int64_t B, int64_t T, int64_t C, int64_t k, int64_t F) {
    const int64_t To = T - k + 1;
    const bool par = g_parallel.load() && B >= 64 && B * T * k * C * F >= kParallelCutoff;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t t = 0; t < T; ++t) {
            float* dxt = dx + (bi * T + t) * C;
            std::memset(dxt, 0, sizeof(float) * static_cast<size_t>(C));
            const int64_t plo = std::max<int64_t>(0, t - k + 1);
            const int64_t phi = std::min<int64_t>(To - 1, t);
            for (int64_t p = plo; p <= phi; ++p) {
                const float* dyp = dy + (bi * To + p) * F;
                const float* wq = w + (t - p) * C * F;
                for (int64_t c = 0; c < C; ++c) {
                    const float* wc = wq + c * F;
                    float acc = 0.0f;
                    for (int64_t f = 0; f < F; ++f) acc += dyp[f] * wc[f];
                    dxt[c] += acc;
                }
            }
        }
    }
}

void conv1d_dw_serial(const float* x, const float* dy, float* dw, float* dbias,
                      int64_t B, int64_t T, int64_t C, int64_t k, int64_t F) {
    const int64_t To = T - k + 1;
    for (int64_t q = 0; q < k; ++q) {
        for (int64_t c = 0; c < C; ++c) {
            float* wqc = dw + (q * C + c) * F;
            std::memset(wqc, 0, sizeof(float) * static_cast<size_t>(F));
            for (int64_t bi = 0; bi < B; ++bi) {
                for (int64_t p = 0; p < To; ++p) {
                    const float xv = x[(bi * T + p + q) * C + c];
                    const float* dyp = dy + (bi * To + p) * F;
                    for (int64_t f = 0; f < F; ++f) wqc[f] += xv * dyp[f];
                }
            }
        }
    }
    if (dbias) {
        for (int64_t f = 0; f < F; ++f) {
            float acc = 0.0f;
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t p = 0; p < To; ++p) acc += dy[(bi * To + p) * F + f];
            dbias[f] = acc;
        }
    }
}

void conv1d_dw(const float* x, const float* dy, float* dw, float* dbias,
               int64_t B, int64_t T, int64_t C, int64_t k, int64_t F) {
    const int64_t To = T - k + 1;
    const bool par = g_parallel.load() && k * C > 1 && B * To * k * C * F >= kParallelCutoff;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int64_t q = 0; q < k; ++q) {
        for (int64_t c = 0; c < C; ++c) {
            float* wqc = dw + (q * C + c) * F;
            std::memset(wqc, 0, sizeof(float) * static_cast<size_t>(F));
            for (int64_t bi = 0; bi < B; ++bi) {
                for (int64_t p = 0; p < To; ++p) {
                    const float xv = x[(bi * T + p + q) * C + c];
                    const float* dyp = dy + (bi * To + p) * F;
                    for (int64_t f = 0; f < F; ++f) wqc[f] += xv * dyp[f];
                }
            }
        }
    }
    if (dbias) {
        for (int64_t f = 0; f < F; ++f) {
            float acc = 0.0f;
            for (int64_t bi = 0; bi < B; ++bi)
                for (int64_t p = 0; p < To; ++p) acc += dy[(bi * To + p) * F + f];
            dbias[f] = acc;
        }
    }
}

}  // namespace iocseq::nd::kernels
