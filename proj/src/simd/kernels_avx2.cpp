// Compiled with -mavx2 -mfma; only reached after the runtime CPU check in
// dispatch.cpp.
#include "fmlab/simd/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace fmlab::simd::avx2 {
namespace {

// Rows [i, i + R) of C against columns [j, j + 8).
template <int R>
inline void block_8(std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc, bool accumulate) {
    __m256d acc0[R];
    __m256d acc1[R];
    for (int r = 0; r < R; ++r) {
        if (accumulate) {
            acc0[r] = _mm256_loadu_pd(c + r * ldc);
            acc1[r] = _mm256_loadu_pd(c + r * ldc + 4);
        } else {
            acc0[r] = _mm256_setzero_pd();
            acc1[r] = _mm256_setzero_pd();
        }
    }
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        for (int r = 0; r < R; ++r) {
            const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
            acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
            acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
        }
    }
    for (int r = 0; r < R; ++r) {
        _mm256_storeu_pd(c + r * ldc, acc0[r]);
        _mm256_storeu_pd(c + r * ldc + 4, acc1[r]);
    }
}

template <int R>
inline void block_4(std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc, bool accumulate) {
    __m256d acc[R];
    for (int r = 0; r < R; ++r) {
        acc[r] = accumulate ? _mm256_loadu_pd(c + r * ldc) : _mm256_setzero_pd();
    }
    for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        for (int r = 0; r < R; ++r) {
            acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * lda + p), b0, acc[r]);
        }
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + r * ldc, acc[r]);
}

template <int R>
inline void block_1(std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc, bool accumulate) {
    for (int r = 0; r < R; ++r) {
        double acc = accumulate ? c[r * ldc] : 0.0;
        for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[r * lda + p], b[p * ldb], acc);
        c[r * ldc] = acc;
    }
}

template <int R>
inline void row_panel(std::size_t n, std::size_t k,
                      const double* a, std::size_t lda,
                      const double* b, std::size_t ldb,
                      double* c, std::size_t ldc, bool accumulate) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) block_8<R>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
    for (; j + 4 <= n; j += 4) block_4<R>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
    for (; j < n; ++j) block_1<R>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
}

void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda,
          const double* b, std::size_t ldb,
          double* c, std::size_t ldc, bool accumulate) {
    std::size_t i = 0;
    for (; i + 6 <= m; i += 6) {
        row_panel<6>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
    }
    for (; i + 3 <= m; i += 3) {
        row_panel<3>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
    }
    for (; i < m; ++i) {
        row_panel<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
    }
}

void activate(std::size_t n, const double* a, double* h, double* d1, double* d2) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d half = _mm256_set1_pd(0.5);
    const __m256d three_halves = _mm256_set1_pd(1.5);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d x = _mm256_loadu_pd(a + i);
        const __m256d x2 = _mm256_mul_pd(x, x);
        const __m256d r = _mm256_div_pd(one, _mm256_sqrt_pd(_mm256_add_pd(one, x2)));
        const __m256d r2 = _mm256_mul_pd(r, r);
        const __m256d r3 = _mm256_mul_pd(r2, r);
        const __m256d g = _mm256_fmadd_pd(_mm256_mul_pd(half, x), r, half);
        _mm256_storeu_pd(h + i, _mm256_mul_pd(x, g));
        _mm256_storeu_pd(d1 + i, _mm256_fmadd_pd(_mm256_mul_pd(half, x), r3, g));
        if (d2 != nullptr) {
            const __m256d inner = _mm256_fnmadd_pd(_mm256_mul_pd(three_halves, x2), r2, one);
            _mm256_storeu_pd(d2 + i, _mm256_mul_pd(r3, inner));
        }
    }
    if (i < n) generic::table().activate(n - i, a + i, h + i, d1 + i, d2 ? d2 + i : nullptr);
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void mul_add(std::size_t n, const double* x, const double* y,
             const double* u, const double* w, double* out) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d xy = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(_mm256_loadu_pd(u + i), _mm256_loadu_pd(w + i), xy));
    }
    for (; i < n; ++i) out[i] = std::fma(u[i], w[i], x[i] * y[i]);
}

double dot(std::size_t n, const double* x, const double* y) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
    double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
    return acc;
}

}  // namespace

extern const KernelTable kTable;
const KernelTable kTable{"avx2", gemm, activate, mul, mul_add, dot};

}  // namespace fmlab::simd::avx2
