#pragma once

#include <cstddef>
#include <string_view>

namespace tokenlab::kernels {

// Dense row-major helpers used by featurization and the gradient steps.
// Every entry point has a scalar reference and an AVX2/FMA variant; the
// active table is picked once at first use.

struct Table {
    const char* name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // out[j] = sum_l a[l] * X[l*d + j]  (X^T a for an L x d matrix)
    void (*gemv_t)(const double* X, const double* a, std::size_t L, std::size_t d, double* out);
    // out[l] = <X[l,:], w>
    void (*gemv)(const double* X, const double* w, std::size_t L, std::size_t d, double* out);
    // in-place softmax(beta * x), overflow-safe
    void (*softmax)(double* x, std::size_t n, double beta);
};

const Table& scalar_table();
// nullptr when the binary was built without AVX2 support.
const Table* avx2_table();

// Table in use. TOKENLAB_KERNELS=scalar|avx2 overrides the CPU check.
const Table& active();
void force(std::string_view name);   // "scalar", "avx2" or "auto"

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void gemv_t(const double* X, const double* a, std::size_t L, std::size_t d, double* out) {
    active().gemv_t(X, a, L, d, out);
}
inline void gemv(const double* X, const double* w, std::size_t L, std::size_t d, double* out) {
    active().gemv(X, w, L, d, out);
}
inline void softmax(double* x, std::size_t n, double beta) { active().softmax(x, n, beta); }

}  // namespace tokenlab::kernels
