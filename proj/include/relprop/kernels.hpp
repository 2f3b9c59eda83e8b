#pragma once

#include <cstddef>

namespace relprop::kernels {

struct SplitSums {
    double pos = 0.0;
    double neg = 0.0;
};

/// Inner-loop primitives shared by the forward pass and the decomposition
/// rules. Every entry has a scalar reference implementation; on x86-64 an
/// AVX2+FMA variant is selected at runtime when the CPU supports it. The
/// variants are equivalence-tested against the scalar kernels, which remain
/// the semantic reference.
///
/// Naming: `split` kernels separate the products x[i]*w into their positive
/// and negative parts, which is the alpha/beta branch bookkeeping; `bounded`
/// kernels evaluate x[i]*w[i] - low*max(w[i],0) - high*min(w[i],0), the
/// box-constrained input-layer term.
struct Table {
    const char* name;

    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);

    // sum_i a[i]
    double (*sum)(const double* a, std::size_t n);

    // y[i] += c * x[i]
    void (*axpy)(double c, const double* x, double* y, std::size_t n);

    // y[i] += c * x[i] * s[i]
    void (*mul_axpy)(double c, const double* x, const double* s, double* y, std::size_t n);

    // {sum_i max(x[i]*w[i],0), sum_i min(x[i]*w[i],0)}
    SplitSums (*split_dot)(const double* x, const double* w, std::size_t n);

    // y[i] += p > 0 ? cpos * p : cneg * p, with p = x[i]*w[i]
    void (*split_axpy)(double cpos, double cneg, const double* x, const double* w, double* y, std::size_t n);

    // pos[i] += max(w*x[i],0); neg[i] += min(w*x[i],0)
    void (*split_accum)(double w, const double* x, double* pos, double* neg, std::size_t n);

    // y[i] += p > 0 ? p * spos[i] : p * sneg[i], with p = w * x[i]
    void (*split_mul_axpy)(double w, const double* x, const double* spos, const double* sneg, double* y, std::size_t n);

    // sum_i (x[i]*w[i] - low*max(w[i],0) - high*min(w[i],0))
    double (*bounded_dot)(const double* x, const double* w, double low, double high, std::size_t n);

    // y[i] += c * (x[i]*w[i] - low*max(w[i],0) - high*min(w[i],0))
    void (*bounded_axpy)(double c, const double* x, const double* w, double low, double high, double* y, std::size_t n);
};

/// The scalar reference kernels. Always available.
const Table& scalar();

/// The AVX2+FMA kernels, or nullptr when not compiled in or the CPU lacks
/// support.
const Table* avx2();

/// The table used by the library: the widest supported variant, resolved once
/// per process. RELPROP_KERNELS=scalar|avx2 forces a specific table (avx2
/// falls back to scalar with a warning when unsupported).
const Table& active();

} // namespace relprop::kernels
