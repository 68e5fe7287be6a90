#if defined(__x86_64__) || defined(_M_X64)

#include "dialhall/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace dialhall::kern::detail {

namespace {

inline double hsum(__m256d v) {
    // lanes summed pairwise: (v0+v2) + (v1+v3)
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* a, const double* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d va = _mm256_loadu_pd(a + i);
        const __m256d vb = _mm256_loadu_pd(b + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double* y, double a, const double* x, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vy = _mm256_loadu_pd(y + i);
        const __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, vx)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_avx2(double* x, double a, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
    }
    for (; i < n; ++i) x[i] *= a;
}

double sum_abs_avx2(const double* x, size_t n) {
    // clear the sign bit
    const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_and_pd(_mm256_loadu_pd(x + i), mask));
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += std::fabs(x[i]);
    return s;
}

double sum_sq_avx2(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(v, v));
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

double sqdist_avx2(const double* a, const double* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

const Ops& avx2_ops() {
    static const Ops ops{dot_avx2, axpy_avx2, scale_avx2,
                         sum_abs_avx2, sum_sq_avx2, sqdist_avx2};
    return ops;
}

}  // namespace dialhall::kern::detail

#endif  // x86_64
