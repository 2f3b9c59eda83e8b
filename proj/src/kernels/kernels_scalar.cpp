#include "relprop/kernels.hpp"

namespace relprop::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_scalar(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

void axpy_scalar(double c, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

void mul_axpy_scalar(double c, const double* x, const double* s, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i] * s[i];
}

SplitSums split_dot_scalar(const double* x, const double* w, std::size_t n) {
    SplitSums out;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = x[i] * w[i];
        if (p > 0.0) {
            out.pos += p;
        } else {
            out.neg += p;
        }
    }
    return out;
}

void split_axpy_scalar(double cpos, double cneg, const double* x, const double* w, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double p = x[i] * w[i];
        y[i] += (p > 0.0 ? cpos : cneg) * p;
    }
}

void split_accum_scalar(double w, const double* x, double* pos, double* neg, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double p = w * x[i];
        if (p > 0.0) {
            pos[i] += p;
        } else {
            neg[i] += p;
        }
    }
}

void split_mul_axpy_scalar(double w, const double* x, const double* spos, const double* sneg, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double p = w * x[i];
        y[i] += p * (p > 0.0 ? spos[i] : sneg[i]);
    }
}

double bounded_dot_scalar(const double* x, const double* w, double low, double high, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double wp = w[i] > 0.0 ? w[i] : 0.0;
        const double wn = w[i] < 0.0 ? w[i] : 0.0;
        acc += x[i] * w[i] - low * wp - high * wn;
    }
    return acc;
}

void bounded_axpy_scalar(double c, const double* x, const double* w, double low, double high, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double wp = w[i] > 0.0 ? w[i] : 0.0;
        const double wn = w[i] < 0.0 ? w[i] : 0.0;
        y[i] += c * (x[i] * w[i] - low * wp - high * wn);
    }
}

constexpr Table kScalarTable = {
    "scalar",
    dot_scalar,
    sum_scalar,
    axpy_scalar,
    mul_axpy_scalar,
    split_dot_scalar,
    split_axpy_scalar,
    split_accum_scalar,
    split_mul_axpy_scalar,
    bounded_dot_scalar,
    bounded_axpy_scalar,
};

} // namespace

const Table& scalar() { return kScalarTable; }

} // namespace relprop::kernels
