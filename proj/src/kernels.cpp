// SPDX-License-Identifier: Apache-2.0

#include "dprcnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dprc::kernels {

namespace {

constexpr std::size_t kParallelWork = std::size_t{1} << 17;

inline double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
}

void scale_c(std::size_t m, std::size_t n, double beta, double* c, std::size_t ldc) {
    if (beta == 1.0) return;
    for (std::size_t i = 0; i < m; ++i) {
        double* row = c + i * ldc;
        if (beta == 0.0)
            std::fill(row, row + n, 0.0);
        else
            for (std::size_t j = 0; j < n; ++j) row[j] *= beta;
    }
}

// Register-tiled micro-kernels on GCC/Clang vector extensions. A 4 x 16 tile
// of C stays in registers while the shared dimension streams through.
using v8d = double __attribute__((vector_size(64)));

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;

inline v8d load8(const double* p) {
    v8d v;
    __builtin_memcpy(&v, p, sizeof v);
    return v;
}

inline void store8(double* p, v8d v) { __builtin_memcpy(p, &v, sizeof v); }

inline double hsum(v8d v) {
    return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
}

// C[i0.., j0..] += alpha * op(A)[i0.., :] * Bp, with Bp a k x 16 panel of row stride ldb.
template <bool TransA>
void tile_nn(std::size_t rows, std::size_t cols, std::size_t k, double alpha, const double* a,
             std::size_t lda, std::size_t i0, const double* bp, std::size_t ldb, double* c, std::size_t ldc) {
    std::size_t ri[kMr];
    for (std::size_t r = 0; r < kMr; ++r) ri[r] = i0 + std::min(r, rows - 1);
    v8d acc[kMr][2] = {};
    for (std::size_t p = 0; p < k; ++p) {
        const v8d b0 = load8(bp + p * ldb), b1 = load8(bp + p * ldb + 8);
        for (std::size_t r = 0; r < kMr; ++r) {
            const double av = TransA ? a[p * lda + ri[r]] : a[ri[r] * lda + p];
            acc[r][0] += av * b0;
            acc[r][1] += av * b1;
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        double* cr = c + (i0 + r) * ldc;
        if (cols == kNr) {
            store8(cr, load8(cr) + alpha * acc[r][0]);
            store8(cr + 8, load8(cr + 8) + alpha * acc[r][1]);
        } else {
            for (std::size_t j = 0; j < cols; ++j) cr[j] += alpha * (j < 8 ? acc[r][0][j] : acc[r][1][j - 8]);
        }
    }
}

// C += alpha * op(A) * B with B row-contiguous over n.
template <bool TransA>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    const std::size_t row_tiles = (m + kMr - 1) / kMr, col_tiles = (n + kNr - 1) / kNr;
    const long long tiles = static_cast<long long>(row_tiles * col_tiles);
#pragma omp parallel if (m * n * k > kParallelWork)
    {
        std::vector<double> panel;
#pragma omp for schedule(static)
        for (long long t = 0; t < tiles; ++t) {
            const std::size_t jt = static_cast<std::size_t>(t) / row_tiles, it = static_cast<std::size_t>(t) % row_tiles;
            const std::size_t i0 = it * kMr, j0 = jt * kNr;
            const std::size_t rows = std::min(kMr, m - i0), cols = std::min(kNr, n - j0);
            if (cols == kNr) {
                tile_nn<TransA>(rows, cols, k, alpha, a, lda, i0, b + j0, ldb, c + j0, ldc);
            } else {
                // Ragged right edge: zero-padded copy of the panel.
                panel.assign(k * kNr, 0.0);
                for (std::size_t p = 0; p < k; ++p)
                    std::copy(b + p * ldb + j0, b + p * ldb + j0 + cols, panel.begin() + static_cast<std::ptrdiff_t>(p * kNr));
                tile_nn<TransA>(rows, cols, k, alpha, a, lda, i0, panel.data(), kNr, c + j0, ldc);
            }
        }
    }
}

// C += alpha * A * B^T with A m x k and B n x k, both row-contiguous over k.
// 4 x 4 tiles of dot products share their loads.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    constexpr std::size_t T = 4;
    const std::size_t row_tiles = (m + T - 1) / T, col_tiles = (n + T - 1) / T;
    const long long tiles = static_cast<long long>(row_tiles * col_tiles);
    const std::size_t kv = k - k % 8;
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (long long t = 0; t < tiles; ++t) {
        const std::size_t i0 = (static_cast<std::size_t>(t) / col_tiles) * T;
        const std::size_t j0 = (static_cast<std::size_t>(t) % col_tiles) * T;
        const std::size_t rows = std::min(T, m - i0), cols = std::min(T, n - j0);
        const double* ar[T];
        const double* br[T];
        for (std::size_t r = 0; r < T; ++r) {
            ar[r] = a + (i0 + std::min(r, rows - 1)) * lda;
            br[r] = b + (j0 + std::min(r, cols - 1)) * ldb;
        }
        v8d acc[T][T] = {};
        for (std::size_t p = 0; p < kv; p += 8) {
            v8d av[T], bv[T];
            for (std::size_t r = 0; r < T; ++r) {
                av[r] = load8(ar[r] + p);
                bv[r] = load8(br[r] + p);
            }
            for (std::size_t r = 0; r < T; ++r)
                for (std::size_t q = 0; q < T; ++q) acc[r][q] += av[r] * bv[q];
        }
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t q = 0; q < cols; ++q) {
                double s = hsum(acc[r][q]);
                for (std::size_t p = kv; p < k; ++p) s += ar[r][p] * br[q][p];
                c[(i0 + r) * ldc + j0 + q] += alpha * s;
            }
    }
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
    scale_c(m, n, beta, c, ldc);
    if (m == 0 || n == 0 || k == 0 || alpha == 0.0) return;
    if (tb == Trans::yes) {
        if (ta == Trans::no) {
            gemm_nt(m, n, k, alpha, a, lda, b, ldb, c, ldc);
            return;
        }
        // Rare TT case: materialize B^T.
        std::vector<double> bt(k * n);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
        gemm_nn<true>(m, n, k, alpha, a, lda, bt.data(), n, c, ldc);
        return;
    }
    if (ta == Trans::no)
        gemm_nn<false>(m, n, k, alpha, a, lda, b, ldb, c, ldc);
    else
        gemm_nn<true>(m, n, k, alpha, a, lda, b, ldb, c, ldc);
}

void layer_norm_forward(std::size_t outer, std::size_t n, std::size_t inner, const double* x,
                        const double* scale, const double* shift, double eps, double* y,
                        double* mean, double* rstd) {
    const long long oo = static_cast<long long>(outer);
#pragma omp parallel for schedule(static) if (outer * n * inner > kParallelWork)
    for (long long ob = 0; ob < oo; ++ob) {
        const std::size_t o = static_cast<std::size_t>(ob);
        const double* xo = x + o * n * inner;
        double* yo = y + o * n * inner;
        double* mu = mean + o * inner;
        double* rs = rstd + o * inner;
        // Two passes over the n rows; each row is contiguous over inner.
        std::fill(mu, mu + inner, 0.0);
        for (std::size_t d = 0; d < n; ++d) {
            const double* row = xo + d * inner;
            for (std::size_t q = 0; q < inner; ++q) mu[q] += row[q];
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t q = 0; q < inner; ++q) mu[q] *= inv_n;
        std::fill(rs, rs + inner, 0.0);
        for (std::size_t d = 0; d < n; ++d) {
            const double* row = xo + d * inner;
            for (std::size_t q = 0; q < inner; ++q) {
                const double dv = row[q] - mu[q];
                rs[q] += dv * dv;
            }
        }
        for (std::size_t q = 0; q < inner; ++q) rs[q] = 1.0 / std::sqrt(rs[q] * inv_n + eps);
        for (std::size_t d = 0; d < n; ++d) {
            const double* row = xo + d * inner;
            double* out = yo + d * inner;
            const double g = scale[d], b = shift[d];
            for (std::size_t q = 0; q < inner; ++q) out[q] = g * (row[q] - mu[q]) * rs[q] + b;
        }
    }
}

void layer_norm_backward(std::size_t outer, std::size_t n, std::size_t inner, const double* x,
                         const double* scale, const double* mean, const double* rstd,
                         const double* dy, double* dx, double* dscale, double* dshift) {
    // dx = rstd * (g*dy - mean(g*dy) - xhat * mean(g*dy*xhat)); scale/shift
    // reductions run serially to keep the summation order fixed.
    std::vector<double> s1(inner), s2(inner);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* xo = x + o * n * inner;
        const double* dyo = dy + o * n * inner;
        double* dxo = dx + o * n * inner;
        const double* mu = mean + o * inner;
        const double* rs = rstd + o * inner;
        std::fill(s1.begin(), s1.end(), 0.0);
        std::fill(s2.begin(), s2.end(), 0.0);
        for (std::size_t d = 0; d < n; ++d) {
            const double* xr = xo + d * inner;
            const double* gr = dyo + d * inner;
            const double g = scale[d];
            double ds = 0, db = 0;
            for (std::size_t q = 0; q < inner; ++q) {
                const double xhat = (xr[q] - mu[q]) * rs[q];
                const double gy = g * gr[q];
                s1[q] += gy;
                s2[q] += gy * xhat;
                ds += gr[q] * xhat;
                db += gr[q];
            }
            dscale[d] += ds;
            dshift[d] += db;
        }
        for (std::size_t d = 0; d < n; ++d) {
            const double* xr = xo + d * inner;
            const double* gr = dyo + d * inner;
            double* out = dxo + d * inner;
            const double g = scale[d];
            for (std::size_t q = 0; q < inner; ++q) {
                const double xhat = (xr[q] - mu[q]) * rs[q];
                out[q] += rs[q] * (g * gr[q] - s1[q] * inv_n - xhat * s2[q] * inv_n);
            }
        }
    }
}

void gelu_forward(std::size_t count, const double* x, double* y) {
    const long long nn = static_cast<long long>(count);
#pragma omp parallel for simd schedule(static) if (count > kParallelWork)
    for (long long i = 0; i < nn; ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
}

void gelu_backward(std::size_t count, const double* x, const double* dy, double* dx) {
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    const long long nn = static_cast<long long>(count);
#pragma omp parallel for simd schedule(static) if (count > kParallelWork)
    for (long long i = 0; i < nn; ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx[i] += dy[i] * (cdf + v * pdf);
    }
}

void lstm_forward(const LstmShape& s, const double* x, const double* w_ih, const double* w_hh,
                  const double* bias, double* h, double* c, double* gates) {
    const std::size_t H = s.hidden, T = s.steps, N = s.batch, TN = T * N;
    // Input projections for every step at once.
    gemm(Trans::no, Trans::no, 4 * H, TN, s.input, 1.0, w_ih, s.input, x, TN, 0.0, gates, TN);
    for (std::size_t step = 0; step < T; ++step) {
        const std::size_t t = s.reverse ? T - 1 - step : step;
        const std::size_t tp = s.reverse ? t + 1 : t - 1;
        double* g_t = gates + t * N;
        if (step > 0) gemm(Trans::no, Trans::no, 4 * H, N, H, 1.0, w_hh, H, h + tp * N, TN, 1.0, g_t, TN);
        for (std::size_t u = 0; u < H; ++u) {
            double* gi = g_t + u * TN;
            double* gf = g_t + (H + u) * TN;
            double* gg = g_t + (2 * H + u) * TN;
            double* go = g_t + (3 * H + u) * TN;
            const double bi = bias[u], bf = bias[H + u], bg = bias[2 * H + u], bo = bias[3 * H + u];
            double* ct = c + u * TN + t * N;
            double* ht = h + u * TN + t * N;
            const double* cp = step > 0 ? c + u * TN + tp * N : nullptr;
            for (std::size_t n = 0; n < N; ++n) {
                const double iv = sigmoid(gi[n] + bi);
                const double fv = sigmoid(gf[n] + bf);
                const double gv = std::tanh(gg[n] + bg);
                const double ov = sigmoid(go[n] + bo);
                const double cv = (cp ? fv * cp[n] : 0.0) + iv * gv;
                gi[n] = iv;
                gf[n] = fv;
                gg[n] = gv;
                go[n] = ov;
                ct[n] = cv;
                ht[n] = ov * std::tanh(cv);
            }
        }
    }
}

void lstm_backward(const LstmShape& s, const double* x, const double* w_ih, const double* w_hh,
                   const double* h, const double* c, const double* gates, const double* dh,
                   double* dx, double* dw_ih, double* dw_hh, double* dbias) {
    const std::size_t H = s.hidden, T = s.steps, N = s.batch, TN = T * N;
    std::vector<double> dg(4 * H * TN, 0.0);
    std::vector<double> dh_next(H * N, 0.0), dc_next(H * N, 0.0);
    for (std::size_t step = T; step-- > 0;) {
        const std::size_t t = s.reverse ? T - 1 - step : step;
        const std::size_t tp = s.reverse ? t + 1 : t - 1;
        const bool has_prev = step > 0;
        for (std::size_t u = 0; u < H; ++u) {
            const double* gi = gates + u * TN + t * N;
            const double* gf = gates + (H + u) * TN + t * N;
            const double* gg = gates + (2 * H + u) * TN + t * N;
            const double* go = gates + (3 * H + u) * TN + t * N;
            const double* ct = c + u * TN + t * N;
            const double* cp = has_prev ? c + u * TN + tp * N : nullptr;
            const double* dht = dh + u * TN + t * N;
            double* di = dg.data() + u * TN + t * N;
            double* df = dg.data() + (H + u) * TN + t * N;
            double* dgg = dg.data() + (2 * H + u) * TN + t * N;
            double* dout = dg.data() + (3 * H + u) * TN + t * N;
            double* dhn = dh_next.data() + u * N;
            double* dcn = dc_next.data() + u * N;
            for (std::size_t n = 0; n < N; ++n) {
                const double dhv = dht[n] + dhn[n];
                const double tc = std::tanh(ct[n]);
                const double dc = dcn[n] + dhv * go[n] * (1.0 - tc * tc);
                const double cprev = cp ? cp[n] : 0.0;
                di[n] = dc * gg[n] * gi[n] * (1.0 - gi[n]);
                df[n] = dc * cprev * gf[n] * (1.0 - gf[n]);
                dgg[n] = dc * gi[n] * (1.0 - gg[n] * gg[n]);
                dout[n] = dhv * tc * go[n] * (1.0 - go[n]);
                dcn[n] = dc * gf[n];
            }
        }
        if (has_prev)
            gemm(Trans::yes, Trans::no, H, N, 4 * H, 1.0, w_hh, H, dg.data() + t * N, TN, 0.0,
                 dh_next.data(), N);
    }
    for (std::size_t r = 0; r < 4 * H; ++r) {
        const double* row = dg.data() + r * TN;
        double acc = 0;
        for (std::size_t q = 0; q < TN; ++q) acc += row[q];
        dbias[r] += acc;
    }
    gemm(Trans::no, Trans::yes, 4 * H, s.input, TN, 1.0, dg.data(), TN, x, TN, 1.0, dw_ih, s.input);
    gemm(Trans::yes, Trans::no, s.input, TN, 4 * H, 1.0, w_ih, s.input, dg.data(), TN, 1.0, dx, TN);
    if (T > 1) {
        // h shifted by one step in the recurrence direction; zero at the first step.
        std::vector<double> hprev(H * TN, 0.0);
        for (std::size_t u = 0; u < H; ++u)
            for (std::size_t t = 0; t < T; ++t) {
                const bool first = s.reverse ? t == T - 1 : t == 0;
                if (first) continue;
                const std::size_t tp = s.reverse ? t + 1 : t - 1;
                std::copy_n(h + u * TN + tp * N, N, hprev.data() + u * TN + t * N);
            }
        gemm(Trans::no, Trans::yes, 4 * H, H, TN, 1.0, dg.data(), TN, hprev.data(), TN, 1.0, dw_hh, H);
    }
}

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ta == Trans::no ? a[i * lda + p] : a[p * lda + i];
                const double bv = tb == Trans::no ? b[p * ldb + j] : b[j * ldb + p];
                acc += av * bv;
            }
            double& cv = c[i * ldc + j];
            cv = (beta == 0.0 ? 0.0 : beta * cv) + alpha * acc;
        }
}

void layer_norm_forward(std::size_t outer, std::size_t n, std::size_t inner, const double* x,
                        const double* scale, const double* shift, double eps, double* y,
                        double* mean, double* rstd) {
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t q = 0; q < inner; ++q) {
            auto at = [&](std::size_t d) { return o * n * inner + d * inner + q; };
            double mu = 0;
            for (std::size_t d = 0; d < n; ++d) mu += x[at(d)];
            mu /= static_cast<double>(n);
            double var = 0;
            for (std::size_t d = 0; d < n; ++d) var += (x[at(d)] - mu) * (x[at(d)] - mu);
            var /= static_cast<double>(n);
            const double r = 1.0 / std::sqrt(var + eps);
            for (std::size_t d = 0; d < n; ++d) y[at(d)] = scale[d] * (x[at(d)] - mu) * r + shift[d];
            mean[o * inner + q] = mu;
            rstd[o * inner + q] = r;
        }
}

void gelu_forward(std::size_t count, const double* x, double* y) {
    for (std::size_t i = 0; i < count; ++i) y[i] = 0.5 * x[i] * std::erfc(-x[i] * M_SQRT1_2);
}

void lstm_forward(const LstmShape& s, const double* x, const double* w_ih, const double* w_hh,
                  const double* bias, double* h) {
    const std::size_t D = s.input, H = s.hidden, T = s.steps, N = s.batch, TN = T * N;
    std::vector<double> hp(H), cp(H), z(4 * H);
    for (std::size_t n = 0; n < N; ++n) {
        std::fill(hp.begin(), hp.end(), 0.0);
        std::fill(cp.begin(), cp.end(), 0.0);
        for (std::size_t step = 0; step < T; ++step) {
            const std::size_t t = s.reverse ? T - 1 - step : step;
            for (std::size_t r = 0; r < 4 * H; ++r) {
                double acc = bias[r];
                for (std::size_t d = 0; d < D; ++d) acc += w_ih[r * D + d] * x[d * TN + t * N + n];
                for (std::size_t q = 0; q < H; ++q) acc += w_hh[r * H + q] * hp[q];
                z[r] = acc;
            }
            for (std::size_t u = 0; u < H; ++u) {
                const double iv = 1.0 / (1.0 + std::exp(-z[u]));
                const double fv = 1.0 / (1.0 + std::exp(-z[H + u]));
                const double gv = std::tanh(z[2 * H + u]);
                const double ov = 1.0 / (1.0 + std::exp(-z[3 * H + u]));
                cp[u] = fv * cp[u] + iv * gv;
                hp[u] = ov * std::tanh(cp[u]);
                h[u * TN + t * N + n] = hp[u];
            }
        }
    }
}

}  // namespace reference

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace dprc::kernels
