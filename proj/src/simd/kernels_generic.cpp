#include "fmlab/simd/kernels.hpp"

#include <cmath>

namespace fmlab::simd::generic {
namespace {

void gemm(std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda,
          const double* b, std::size_t ldb,
          double* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        }
        const double* arow = a + i * lda;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void activate(std::size_t n, const double* a, double* h, double* d1, double* d2) {
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i];
        const double r = 1.0 / std::sqrt(1.0 + x * x);
        const double r3 = r * r * r;
        const double g = 0.5 + 0.5 * x * r;
        h[i] = x * g;
        d1[i] = g + 0.5 * x * r3;
        if (d2 != nullptr) d2[i] = r3 * (1.0 - 1.5 * x * x * r * r);
    }
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void mul_add(std::size_t n, const double* x, const double* y,
             const double* u, const double* w, double* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i] + u[i] * w[i];
}

double dot(std::size_t n, const double* x, const double* y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

}  // namespace

const KernelTable& table() {
    static const KernelTable t{"generic", gemm, activate, mul, mul_add, dot};
    return t;
}

}  // namespace fmlab::simd::generic
