// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma on x86-64 only; the
// dispatcher guards execution behind a runtime CPU check.
//
// Branch decisions (the positive/negative splits) are taken on the rounded
// product, exactly as the scalar kernels do, so the two variants differ only
// by accumulation order.

#include "relprop/kernels.hpp"

#if defined(RELPROP_HAVE_AVX2)

#include <immintrin.h>

namespace relprop::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double out = hsum(acc);
    for (; i < n; ++i) out += a[i] * b[i];
    return out;
}

double sum_avx2(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    }
    double out = hsum(acc);
    for (; i < n; ++i) out += a[i];
    return out;
}

void axpy_avx2(double c, const double* x, double* y, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(vc, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += c * x[i];
}

void mul_axpy_avx2(double c, const double* x, const double* s, double* y, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d cx = _mm256_mul_pd(vc, _mm256_loadu_pd(x + i));
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(cx, _mm256_loadu_pd(s + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += c * x[i] * s[i];
}

SplitSums split_dot_avx2(const double* x, const double* w, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    __m256d pos = zero;
    __m256d neg = zero;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d p = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(w + i));
        const __m256d gt = _mm256_cmp_pd(p, zero, _CMP_GT_OQ);
        pos = _mm256_add_pd(pos, _mm256_and_pd(p, gt));
        neg = _mm256_add_pd(neg, _mm256_andnot_pd(gt, p));
    }
    SplitSums out;
    out.pos = hsum(pos);
    out.neg = hsum(neg);
    for (; i < n; ++i) {
        const double p = x[i] * w[i];
        if (p > 0.0) {
            out.pos += p;
        } else {
            out.neg += p;
        }
    }
    return out;
}

void split_axpy_avx2(double cpos, double cneg, const double* x, const double* w, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d vcp = _mm256_set1_pd(cpos);
    const __m256d vcn = _mm256_set1_pd(cneg);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d p = _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(w + i));
        const __m256d gt = _mm256_cmp_pd(p, zero, _CMP_GT_OQ);
        const __m256d c = _mm256_blendv_pd(vcn, vcp, gt);
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(c, p, vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) {
        const double p = x[i] * w[i];
        y[i] += (p > 0.0 ? cpos : cneg) * p;
    }
}

void split_accum_avx2(double w, const double* x, double* pos, double* neg, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d vw = _mm256_set1_pd(w);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d p = _mm256_mul_pd(vw, _mm256_loadu_pd(x + i));
        const __m256d gt = _mm256_cmp_pd(p, zero, _CMP_GT_OQ);
        const __m256d vp = _mm256_add_pd(_mm256_loadu_pd(pos + i), _mm256_and_pd(p, gt));
        const __m256d vn = _mm256_add_pd(_mm256_loadu_pd(neg + i), _mm256_andnot_pd(gt, p));
        _mm256_storeu_pd(pos + i, vp);
        _mm256_storeu_pd(neg + i, vn);
    }
    for (; i < n; ++i) {
        const double p = w * x[i];
        if (p > 0.0) {
            pos[i] += p;
        } else {
            neg[i] += p;
        }
    }
}

void split_mul_axpy_avx2(double w, const double* x, const double* spos, const double* sneg, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d vw = _mm256_set1_pd(w);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d p = _mm256_mul_pd(vw, _mm256_loadu_pd(x + i));
        const __m256d gt = _mm256_cmp_pd(p, zero, _CMP_GT_OQ);
        const __m256d s = _mm256_blendv_pd(_mm256_loadu_pd(sneg + i), _mm256_loadu_pd(spos + i), gt);
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(p, s, vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) {
        const double p = w * x[i];
        y[i] += p * (p > 0.0 ? spos[i] : sneg[i]);
    }
}

double bounded_dot_avx2(const double* x, const double* w, double low, double high, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d vlow = _mm256_set1_pd(low);
    const __m256d vhigh = _mm256_set1_pd(high);
    __m256d acc = zero;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vw = _mm256_loadu_pd(w + i);
        const __m256d wp = _mm256_max_pd(vw, zero);
        const __m256d wn = _mm256_min_pd(vw, zero);
        __m256d t = _mm256_mul_pd(_mm256_loadu_pd(x + i), vw);
        t = _mm256_fnmadd_pd(vlow, wp, t);
        t = _mm256_fnmadd_pd(vhigh, wn, t);
        acc = _mm256_add_pd(acc, t);
    }
    double out = hsum(acc);
    for (; i < n; ++i) {
        const double wp = w[i] > 0.0 ? w[i] : 0.0;
        const double wn = w[i] < 0.0 ? w[i] : 0.0;
        out += x[i] * w[i] - low * wp - high * wn;
    }
    return out;
}

void bounded_axpy_avx2(double c, const double* x, const double* w, double low, double high, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d vlow = _mm256_set1_pd(low);
    const __m256d vhigh = _mm256_set1_pd(high);
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vw = _mm256_loadu_pd(w + i);
        const __m256d wp = _mm256_max_pd(vw, zero);
        const __m256d wn = _mm256_min_pd(vw, zero);
        __m256d t = _mm256_mul_pd(_mm256_loadu_pd(x + i), vw);
        t = _mm256_fnmadd_pd(vlow, wp, t);
        t = _mm256_fnmadd_pd(vhigh, wn, t);
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(vc, t, vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) {
        const double wp = w[i] > 0.0 ? w[i] : 0.0;
        const double wn = w[i] < 0.0 ? w[i] : 0.0;
        y[i] += c * (x[i] * w[i] - low * wp - high * wn);
    }
}

constexpr Table kAvx2Table = {
    "avx2",
    dot_avx2,
    sum_avx2,
    axpy_avx2,
    mul_axpy_avx2,
    split_dot_avx2,
    split_axpy_avx2,
    split_accum_avx2,
    split_mul_axpy_avx2,
    bounded_dot_avx2,
    bounded_axpy_avx2,
};

} // namespace

const Table* avx2_table_impl() { return &kAvx2Table; }

} // namespace relprop::kernels

#endif // RELPROP_HAVE_AVX2
