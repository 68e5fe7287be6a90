#include "dialhall/kernels.hpp"

#include <cmath>

namespace dialhall::kern::detail {

namespace {

double dot_scalar(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(double* y, double a, const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(double* x, double a, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] *= a;
}

double sum_abs_scalar(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::fabs(x[i]);
    return acc;
}

double sum_sq_scalar(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

double sqdist_scalar(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops ops{dot_scalar, axpy_scalar, scale_scalar,
                         sum_abs_scalar, sum_sq_scalar, sqdist_scalar};
    return ops;
}

}  // namespace dialhall::kern::detail
