#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace tokenlab {

using Vec = std::vector<double>;

double normal_cdf(double x);
double normal_pdf(double x);
double normal_quantile(double p);

// (1+a^2) Phi(-a) - a phi(a) = int_0^inf u^2 phi(u+a) du
double gaussian_tail_moment2(double a);

// Gauss-Hermite rule for the standard normal weight: sum_i w_i f(x_i) ~ E f(Z).
struct QuadratureRule {
    Vec nodes;
    Vec weights;
    std::size_t size() const { return nodes.size(); }
};

QuadratureRule gauss_hermite(int n);
// Shared immutable copy, built on first request.
const QuadratureRule& gauss_hermite_cached(int n);

inline constexpr int kDefaultHermiteOrder = 64;

struct FixedPointReport {
    Vec solution;
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

struct FixedPointOptions {
    double damping = 0.5;
    double tol = 1e-9;
    int max_iter = 10000;
};

using VecMap = std::function<Vec(const Vec&)>;

FixedPointReport fixed_point_solve(const VecMap& map, Vec x0, const FixedPointOptions& opt = {});

struct ScalarMin {
    double argmin;
    double min;
};

// Golden-section search on [lo, hi].
ScalarMin minimize_scalar(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10);

struct SimplexOptions {
    double scale = 0.5;
    double tol = 1e-10;
    int max_iter = 4000;
    int restarts = 3;
    std::uint64_t seed = 0x5eed;
};

struct SimplexMin {
    Vec argmin;
    double min;
    int evaluations;
};

// Nelder-Mead with restarts around the incumbent (n <= 6).
SimplexMin minimize_simplex(const std::function<double(const Vec&)>& f, const Vec& x0, const SimplexOptions& opt = {});

// Bracketed root of a continuous function with f(lo), f(hi) of opposite sign.
double find_root(const std::function<double(double)>& f, double lo, double hi, double rel_tol = 1e-15,
                 int max_iter = 200);

// Expands [lo, hi] geometrically (in log space for positive variables) until a sign change.
double find_root_positive(const std::function<double(double)>& f, double guess, double rel_tol = 1e-15);

}  // namespace tokenlab
