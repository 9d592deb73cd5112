#include <cstdlib>
#include <string>

#include "fmlab/simd/kernels.hpp"

namespace fmlab::simd {

#if defined(FMLAB_HAVE_AVX2)
namespace avx2 {
extern const KernelTable kTable;

const KernelTable* table() {
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return &kTable;
    return nullptr;
}
}  // namespace avx2
#else
namespace avx2 {
const KernelTable* table() { return nullptr; }
}  // namespace avx2
#endif

namespace {

const KernelTable* by_name(std::string_view name) {
    if (name == "generic") return &generic::table();
    if (name == "avx2") return avx2::table();
    if (name == "neon") return neon::table();
    return nullptr;
}

const KernelTable* detect() {
    if (const char* forced = std::getenv("FMLAB_SIMD")) {
        if (const KernelTable* t = by_name(forced)) return t;
    }
    if (const KernelTable* t = avx2::table()) return t;
    if (const KernelTable* t = neon::table()) return t;
    return &generic::table();
}

const KernelTable*& current() {
    static const KernelTable* t = detect();
    return t;
}

}  // namespace

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
    const KernelTable* t = by_name(name);
    if (t == nullptr) return false;
    current() = t;
    return true;
}

}  // namespace fmlab::simd
