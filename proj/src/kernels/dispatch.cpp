#include "relprop/kernels.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace relprop::kernels {

#if defined(RELPROP_HAVE_AVX2)
const Table* avx2_table_impl();
#endif

const Table* avx2() {
#if defined(RELPROP_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? avx2_table_impl() : nullptr;
#else
    return nullptr;
#endif
}

namespace {

const Table& resolve_active() {
    const char* forced = std::getenv("RELPROP_KERNELS");
    if (forced != nullptr) {
        if (std::strcmp(forced, "scalar") == 0) return scalar();
        if (std::strcmp(forced, "avx2") == 0) {
            if (const Table* t = avx2()) return *t;
            std::fprintf(stderr, "relprop: RELPROP_KERNELS=avx2 requested but unavailable, using scalar kernels\n");
            return scalar();
        }
        std::fprintf(stderr, "relprop: unknown RELPROP_KERNELS value '%s', using default dispatch\n", forced);
    }
    if (const Table* t = avx2()) return *t;
    return scalar();
}

} // namespace

const Table& active() {
    static const Table& table = resolve_active();
    return table;
}

} // namespace relprop::kernels
