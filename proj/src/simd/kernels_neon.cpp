#include "fmlab/simd/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

#include <cmath>

namespace fmlab::simd::neon {
namespace {

// Rows [i, i + R) of C against columns [j, j + 4).
template <int R>
inline void block_4(std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc, bool accumulate) {
    float64x2_t acc0[R];
    float64x2_t acc1[R];
    for (int r = 0; r < R; ++r) {
        acc0[r] = accumulate ? vld1q_f64(c + r * ldc) : vdupq_n_f64(0.0);
        acc1[r] = accumulate ? vld1q_f64(c + r * ldc + 2) : vdupq_n_f64(0.0);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t b0 = vld1q_f64(b + p * ldb);
        const float64x2_t b1 = vld1q_f64(b + p * ldb + 2);
        for (int r = 0; r < R; ++r) {
            const float64x2_t av = vdupq_n_f64(a[r * lda + p]);
            acc0[r] = vfmaq_f64(acc0[r], av, b0);
            acc1[r] = vfmaq_f64(acc1[r], av, b1);
        }
    }
    for (int r = 0; r < R; ++r) {
        vst1q_f64(c + r * ldc, acc0[r]);
        vst1q_f64(c + r * ldc + 2, acc1[r]);
    }
}

template <int R>
inline void row_panel(std::size_t n, std::size_t k,
                      const double* a, std::size_t lda,
                      const double* b, std::size_t ldb,
                      double* c, std::size_t ldc, bool accumulate) {
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) block_4<R>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
    for (; j < n; ++j) {
        for (int r = 0; r < R; ++r) {
            double acc = accumulate ? c[r * ldc + j] : 0.0;
            for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[r * lda + p], b[p * ldb + j], acc);
            c[r * ldc + j] = acc;
        }
    }
}

void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda,
          const double* b, std::size_t ldb,
          double* c, std::size_t ldc, bool accumulate) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) row_panel<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
    for (; i < m; ++i) row_panel<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

void activate(std::size_t n, const double* a, double* h, double* d1, double* d2) {
    const float64x2_t one = vdupq_n_f64(1.0);
    const float64x2_t half = vdupq_n_f64(0.5);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t x = vld1q_f64(a + i);
        const float64x2_t x2 = vmulq_f64(x, x);
        const float64x2_t r = vdivq_f64(one, vsqrtq_f64(vaddq_f64(one, x2)));
        const float64x2_t r2 = vmulq_f64(r, r);
        const float64x2_t r3 = vmulq_f64(r2, r);
        const float64x2_t g = vfmaq_f64(half, vmulq_f64(half, x), r);
        vst1q_f64(h + i, vmulq_f64(x, g));
        vst1q_f64(d1 + i, vfmaq_f64(g, vmulq_f64(half, x), r3));
        if (d2 != nullptr) {
            const float64x2_t inner = vfmsq_f64(one, vmulq_f64(vdupq_n_f64(1.5), x2), r2);
            vst1q_f64(d2 + i, vmulq_f64(r3, inner));
        }
    }
    if (i < n) generic::table().activate(n - i, a + i, h + i, d1 + i, d2 ? d2 + i : nullptr);
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void mul_add(std::size_t n, const double* x, const double* y,
             const double* u, const double* w, double* out) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t xy = vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i));
        vst1q_f64(out + i, vfmaq_f64(xy, vld1q_f64(u + i), vld1q_f64(w + i)));
    }
    for (; i < n; ++i) out[i] = std::fma(u[i], w[i], x[i] * y[i]);
}

double dot(std::size_t n, const double* x, const double* y) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(x + i), vld1q_f64(y + i));
    double total = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) total = std::fma(x[i], y[i], total);
    return total;
}

const KernelTable kTable{"neon", gemm, activate, mul, mul_add, dot};

}  // namespace

const KernelTable* table() { return &kTable; }

}  // namespace fmlab::simd::neon

#else

namespace fmlab::simd::neon {
const KernelTable* table() { return nullptr; }
}  // namespace fmlab::simd::neon

#endif
