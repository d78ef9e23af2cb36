// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "tokenlab/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace tokenlab::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_t_avx2(const double* X, const double* a, std::size_t L, std::size_t d, double* out) {
    std::size_t j = 0;
    // column blocks of 16 stay in registers across all L rows
    for (; j + 16 <= d; j += 16) {
        __m256d o0 = _mm256_setzero_pd(), o1 = _mm256_setzero_pd();
        __m256d o2 = _mm256_setzero_pd(), o3 = _mm256_setzero_pd();
        for (std::size_t l = 0; l < L; ++l) {
            const double* row = X + l * d + j;
            const __m256d al = _mm256_set1_pd(a[l]);
            o0 = _mm256_fmadd_pd(al, _mm256_loadu_pd(row), o0);
            o1 = _mm256_fmadd_pd(al, _mm256_loadu_pd(row + 4), o1);
            o2 = _mm256_fmadd_pd(al, _mm256_loadu_pd(row + 8), o2);
            o3 = _mm256_fmadd_pd(al, _mm256_loadu_pd(row + 12), o3);
        }
        _mm256_storeu_pd(out + j, o0);
        _mm256_storeu_pd(out + j + 4, o1);
        _mm256_storeu_pd(out + j + 8, o2);
        _mm256_storeu_pd(out + j + 12, o3);
    }
    for (; j < d; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < L; ++l) s += a[l] * X[l * d + j];
        out[j] = s;
    }
}

void gemv_avx2(const double* X, const double* w, std::size_t L, std::size_t d, double* out) {
    for (std::size_t l = 0; l < L; ++l) out[l] = dot_avx2(X + l * d, w, d);
}

void softmax_avx2(double* x, std::size_t n, double beta) {
    // L is small (tens); exp dominates and stays scalar so results match libm
    if (n == 0) return;
    double m = beta * x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::fmax(m, beta * x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(beta * x[i] - m);
        s += x[i];
    }
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

}  // namespace

const Table* avx2_table() {
    static const Table t{"avx2", dot_avx2, axpy_avx2, gemv_t_avx2, gemv_avx2, softmax_avx2};
    return &t;
}

}  // namespace tokenlab::kernels
