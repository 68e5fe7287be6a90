#if defined(__aarch64__)

#include "dialhall/kernels.hpp"

#include <arm_neon.h>

#include <cmath>

namespace dialhall::kern::detail {

namespace {

double dot_neon(const double* a, const double* b, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_neon(double* y, double a, const double* x, size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_neon(double* x, double a, size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), va));
    }
    for (; i < n; ++i) x[i] *= a;
}

double sum_abs_neon(const double* x, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        acc = vaddq_f64(acc, vabsq_f64(vld1q_f64(x + i)));
    }
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += std::fabs(x[i]);
    return s;
}

double sum_sq_neon(const double* x, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t v = vld1q_f64(x + i);
        acc = vaddq_f64(acc, vmulq_f64(v, v));
    }
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

double sqdist_neon(const double* a, const double* b, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        acc = vaddq_f64(acc, vmulq_f64(d, d));
    }
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

const Ops& neon_ops() {
    static const Ops ops{dot_neon, axpy_neon, scale_neon,
                         sum_abs_neon, sum_sq_neon, sqdist_neon};
    return ops;
}

}  // namespace dialhall::kern::detail

#endif  // aarch64
