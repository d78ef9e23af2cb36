#include "tokenlab/kernels.hpp"

#include <cmath>

namespace tokenlab::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_t_scalar(const double* X, const double* a, std::size_t L, std::size_t d, double* out) {
    for (std::size_t j = 0; j < d; ++j) out[j] = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        const double* row = X + l * d;
        for (std::size_t j = 0; j < d; ++j) out[j] += a[l] * row[j];
    }
}

void gemv_scalar(const double* X, const double* w, std::size_t L, std::size_t d, double* out) {
    for (std::size_t l = 0; l < L; ++l) out[l] = dot_scalar(X + l * d, w, d);
}

void softmax_scalar(double* x, std::size_t n, double beta) {
    if (n == 0) return;
    double m = beta * x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::fmax(m, beta * x[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(beta * x[i] - m);
        s += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= s;
}

}  // namespace

const Table& scalar_table() {
    static const Table t{"scalar", dot_scalar, axpy_scalar, gemv_t_scalar, gemv_scalar, softmax_scalar};
    return t;
}

}  // namespace tokenlab::kernels
