#pragma once

#include <cstddef>
#include <string_view>

namespace fmlab::simd {

// Dense row-major kernels behind every batched network evaluation.
// Each backend fills the same table; `active()` picks the widest one the CPU
// supports at startup (override with FMLAB_SIMD=generic|avx2|neon).
struct KernelTable {
    const char* name;

    // C[m x n] (+)= A[m x k] * B[k x n], all row-major with explicit strides.
    void (*gemm)(std::size_t m, std::size_t n, std::size_t k,
                 const double* a, std::size_t lda,
                 const double* b, std::size_t ldb,
                 double* c, std::size_t ldc, bool accumulate);

    // Algebraic SiLU a * g(a), g(a) = (1 + a / sqrt(1 + a^2)) / 2.
    // Writes value, first and (when d2 != nullptr) second derivative.
    void (*activate)(std::size_t n, const double* a, double* h, double* d1, double* d2);

    // out[i] = x[i] * y[i]
    void (*mul)(std::size_t n, const double* x, const double* y, double* out);

    // out[i] = x[i] * y[i] + u[i] * w[i]
    void (*mul_add)(std::size_t n, const double* x, const double* y,
                    const double* u, const double* w, double* out);

    double (*dot)(std::size_t n, const double* x, const double* y);
};

namespace generic {
const KernelTable& table();
}

// Returns nullptr when the backend is not compiled in or the CPU lacks it.
namespace avx2 {
const KernelTable* table();
}
namespace neon {
const KernelTable* table();
}

const KernelTable& active();

// Selects a backend by name; returns false if it is unavailable.
bool select(std::string_view name);

}  // namespace fmlab::simd
