#pragma once

#include <cstdint>

namespace iocseq::nd::kernels {

// Parallel switch for the OpenMP kernels. Every kernel assigns each output
// element to exactly one thread and accumulates it serially, so results are
// bitwise identical to the serial reference for any thread count.
void set_parallel(bool on);
bool parallel_enabled();
void set_threads(int n);
int max_threads();

// C(M,N) = A(M,K) * B(K,N)
void matmul(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);
// C(M,N) = A(M,K) * B(N,K)^T
void matmul_bt(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);
// C(M,N) = A(K,M)^T * B(K,N)
void matmul_at(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);

// Serial references, kept for testing and benchmarking.
void matmul_serial(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);
void matmul_bt_serial(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);
void matmul_at_serial(const float* a, const float* b, float* c, int64_t m, int64_t k, int64_t n);

// 1-d convolution, stride 1, valid padding.
// x (B,T,C), w (k,C,F), bias (F) -> y (B,T-k+1,F)
void conv1d_forward(const float* x, const float* w, const float* bias, float* y,
                    int64_t B, int64_t T, int64_t C, int64_t k, int64_t F);
void conv1d_dx(const float* dy, const float* w, float* dx,
               int64_t B, int64_t T, int64_t C, int64_t k, int64_t F);
void conv1d_dw(const float* x, const float* dy, float* dw, float* dbias,
               int64_t B, int64_t T, int64_t C, int64_t k, int64_t F);

void conv1d_forward_serial(const float* x, const float* w, const float* bias, float* y,
                           int64_t B, int64_t T, int64_t C, int64_t k, int64_t F);
void conv1d_dx_serial(const float* dy, const float* w, float* dx,
                      int64_t B, int64_t T, int64_t C, int64_t k, int64_t F);
void conv1d_dw_serial(const float* x, const float* dy, float* dw, float* dbias,
                      int64_t B, int64_t T, int64_t C, int64_t k, int64_t F);

}  // namespace iocseq::nd::kernels
