#pragma once

#include <cstddef>
#include <string>

namespace dialhall::kern {

// Double-precision inner loops behind a runtime-dispatched backend.
// Scalar is the reference; AVX2/NEON variants are selected at startup when
// the CPU supports them. Elementwise kernels (axpy, scale) are bitwise
// identical across backends; reduction kernels (dot, sum_abs, sum_sq,
// sqdist) may differ from scalar in the last bits because lane accumulators
// change the summation order. Within one process the active backend is
// fixed unless set_backend is called, so every run is deterministic.
enum class Backend { scalar, avx2, neon };

Backend active_backend();
// Returns false (and leaves the backend unchanged) if the CPU lacks support.
bool set_backend(Backend b);
// Re-detects: DIALHALL_KERNELS={auto,scalar,avx2,neon} overrides, else the
// widest supported backend wins.
void reset_backend();
std::string backend_name(Backend b);
bool backend_supported(Backend b);

double dot(const double* a, const double* b, size_t n);
void axpy(double* y, double a, const double* x, size_t n);  // y += a*x
void scale(double* x, double a, size_t n);                  // x *= a
double sum_abs(const double* x, size_t n);
double sum_sq(const double* x, size_t n);
double sqdist(const double* a, const double* b, size_t n);  // sum (a-b)^2

// y = W x, W row-major (rows x cols); one dot per row
void matvec(const double* w, size_t rows, size_t cols, const double* x, double* y);
// y += W^T g; one axpy per row
void matvec_t_add(const double* w, size_t rows, size_t cols, const double* g, double* y);
// W += a * g x^T; one axpy per row
void ger_add(double* w, size_t rows, size_t cols, double a, const double* g, const double* x);

namespace detail {
struct Ops {
    double (*dot)(const double*, const double*, size_t);
    void (*axpy)(double*, double, const double*, size_t);
    void (*scale)(double*, double, size_t);
    double (*sum_abs)(const double*, size_t);
    double (*sum_sq)(const double*, size_t);
    double (*sqdist)(const double*, const double*, size_t);
};
const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif
}  // namespace detail

}  // namespace dialhall::kern
