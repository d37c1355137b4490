// SPDX-License-Identifier: Apache-2.0
//
// Numeric kernels behind the autodiff ops. Every kernel has a straightforward
// serial twin in kernels::reference that is kept for tests and benchmarks;
// the top-level versions are cache-blocked and OpenMP-parallel.
//
// Matrices are row-major with explicit leading dimensions, BLAS style.

#pragma once

#include <cstddef>

namespace dprc::kernels {

enum class Trans { no, yes };

// C = alpha * op(A) * op(B) + beta * C, op(A) is m x k, op(B) is k x n.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc);

// Normalizes `count` slices of length n laid out with stride `inner` between
// consecutive elements; slices are indexed by (outer, inner) pairs.
// mean/rstd receive outer*inner entries.
void layer_norm_forward(std::size_t outer, std::size_t n, std::size_t inner, const double* x,
                        const double* scale, const double* shift, double eps, double* y,
                        double* mean, double* rstd);
void layer_norm_backward(std::size_t outer, std::size_t n, std::size_t inner, const double* x,
                         const double* scale, const double* mean, const double* rstd,
                         const double* dy, double* dx, double* dscale, double* dshift);

void gelu_forward(std::size_t count, const double* x, double* y);
void gelu_backward(std::size_t count, const double* x, const double* dy, double* dx);

// One LSTM direction over a batch of sequences.
//
// Layout: x is D x T x N (N independent sequences of length T, sequences
// contiguous at each time step). Gate order in the 4H rows is i, f, g, o.
// h, c are H x T x N and gates (post-activation) 4H x T x N; c and gates are
// saved for the backward pass. A bidirectional layer points h of the two
// directions at the two halves of one 2H x T x N buffer.
struct LstmShape {
    std::size_t input = 0;   // D
    std::size_t hidden = 0;  // H
    std::size_t steps = 0;   // T
    std::size_t batch = 0;   // N
    bool reverse = false;
};

void lstm_forward(const LstmShape& s, const double* x, const double* w_ih, const double* w_hh,
                  const double* bias, double* h, double* c, double* gates);

// Accumulates into dx, dw_ih, dw_hh, dbias. dh is the gradient w.r.t. h in
// the same layout as the forward output.
void lstm_backward(const LstmShape& s, const double* x, const double* w_ih, const double* w_hh,
                   const double* h, const double* c, const double* gates, const double* dh,
                   double* dx, double* dw_ih, double* dw_hh, double* dbias);

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc);

void layer_norm_forward(std::size_t outer, std::size_t n, std::size_t inner, const double* x,
                        const double* scale, const double* shift, double eps, double* y,
                        double* mean, double* rstd);

void gelu_forward(std::size_t count, const double* x, double* y);

// Sequence-at-a-time scalar recurrence; fills h only.
void lstm_forward(const LstmShape& s, const double* x, const double* w_ih, const double* w_hh,
                  const double* bias, double* h);

}  // namespace reference

// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace dprc::kernels
