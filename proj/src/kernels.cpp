#include "dialhall/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace dialhall::kern {

namespace {

using detail::Ops;

bool cpu_has(Backend b) {
    switch (b) {
        case Backend::scalar:
            return true;
        case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2") != 0;
#else
            return false;
#endif
        case Backend::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

const Ops& ops_for(Backend b) {
    switch (b) {
#if defined(__x86_64__) || defined(_M_X64)
        case Backend::avx2:
            return detail::avx2_ops();
#endif
#if defined(__aarch64__)
        case Backend::neon:
            return detail::neon_ops();
#endif
        default:
            return detail::scalar_ops();
    }
}

Backend detect() {
    if (const char* env = std::getenv("DIALHALL_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_has(Backend::avx2)) return Backend::avx2;
        if (std::strcmp(env, "neon") == 0 && cpu_has(Backend::neon)) return Backend::neon;
        // "auto" or anything unrecognized falls through to detection
    }
    if (cpu_has(Backend::avx2)) return Backend::avx2;
    if (cpu_has(Backend::neon)) return Backend::neon;
    return Backend::scalar;
}

struct State {
    Backend backend;
    const Ops* ops;
    State() : backend(detect()), ops(&ops_for(backend)) {}
};

State& state() {
    static State s;
    return s;
}

}  // namespace

Backend active_backend() { return state().backend; }

bool backend_supported(Backend b) { return cpu_has(b); }

bool set_backend(Backend b) {
    if (!cpu_has(b)) return false;
    state().backend = b;
    state().ops = &ops_for(b);
    return true;
}

void reset_backend() {
    state().backend = detect();
    state().ops = &ops_for(state().backend);
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
        case Backend::neon: return "neon";
    }
    return "?";
}

double dot(const double* a, const double* b, size_t n) { return state().ops->dot(a, b, n); }
void axpy(double* y, double a, const double* x, size_t n) { state().ops->axpy(y, a, x, n); }
void scale(double* x, double a, size_t n) { state().ops->scale(x, a, n); }
double sum_abs(const double* x, size_t n) { return state().ops->sum_abs(x, n); }
double sum_sq(const double* x, size_t n) { return state().ops->sum_sq(x, n); }
double sqdist(const double* a, const double* b, size_t n) { return state().ops->sqdist(a, b, n); }

void matvec(const double* w, size_t rows, size_t cols, const double* x, double* y) {
    for (size_t r = 0; r < rows; ++r) y[r] = dot(w + r * cols, x, cols);
}

void matvec_t_add(const double* w, size_t rows, size_t cols, const double* g, double* y) {
    for (size_t r = 0; r < rows; ++r) axpy(y, g[r], w + r * cols, cols);
}

void ger_add(double* w, size_t rows, size_t cols, double a, const double* g, const double* x) {
    for (size_t r = 0; r < rows; ++r) axpy(w + r * cols, a * g[r], x, cols);
}

}  // namespace dialhall::kern
