#include "tokenlab/numerics.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>

#include "tokenlab/errors.hpp"

namespace tokenlab {

double normal_cdf(double x) {
    if (std::isnan(x)) return x;
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double normal_pdf(double x) {
    static const double k = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return k * std::exp(-0.5 * x * x);
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        throw ParameterError("normal_quantile: p outside [0,1]");
    }
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double gaussian_tail_moment2(double a) {
    const double v = (1.0 + a * a) * normal_cdf(-a) - a * normal_pdf(a);
    return v > 0.0 ? v : 0.0;
}

QuadratureRule gauss_hermite(int n) {
    if (n < 2 || n > 256) throw ParameterError("gauss_hermite: order must lie in [2, 256]");
    // Golub-Welsch on the probabilists' Jacobi matrix, then Newton polish and
    // Christoffel weights from the orthonormal recurrence.
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J, Eigen::EigenvaluesOnly);
    Vec x(es.eigenvalues().data(), es.eigenvalues().data() + n);

    auto eval = [n](double t, double& pn, double& dpn, double& christoffel) {
        double p0 = 1.0, p1 = t, s = 1.0 + t * t;
        double d0 = 0.0, d1 = 1.0;
        for (int k = 1; k < n; ++k) {
            const double sk = std::sqrt(static_cast<double>(k));
            const double sk1 = std::sqrt(static_cast<double>(k + 1));
            const double p2 = (t * p1 - sk * p0) / sk1;
            const double d2 = (p1 + t * d1 - sk * d0) / sk1;
            p0 = p1, p1 = p2, d0 = d1, d1 = d2;
            if (k + 1 < n) s += p1 * p1;
        }
        pn = p1, dpn = d1, christoffel = s;
    };
    Vec w(n);
    for (int i = 0; i < n; ++i) {
        double pn, dpn, s;
        for (int it = 0; it < 5; ++it) {
            eval(x[i], pn, dpn, s);
            const double step = pn / dpn;
            x[i] -= step;
            if (std::abs(step) < 1e-16 * (1.0 + std::abs(x[i]))) break;
        }
        eval(x[i], pn, dpn, s);
        w[i] = 1.0 / s;
    }
    for (int i = 0; i < n / 2; ++i) {
        const double xs = 0.5 * (x[n - 1 - i] - x[i]);
        const double ws = 0.5 * (w[i] + w[n - 1 - i]);
        x[i] = -xs, x[n - 1 - i] = xs;
        w[i] = w[n - 1 - i] = ws;
    }
    if (n % 2 == 1) x[n / 2] = 0.0;
    double total = 0.0;
    for (double v : w) total += v;
    for (double& v : w) v /= total;
    return {std::move(x), std::move(w)};
}

const QuadratureRule& gauss_hermite_cached(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<QuadratureRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<QuadratureRule>(gauss_hermite(n));
    return *slot;
}

FixedPointReport fixed_point_solve(const VecMap& map, Vec x0, const FixedPointOptions& opt) {
    if (!(opt.damping > 0.0 && opt.damping <= 1.0)) throw ParameterError("fixed_point_solve: damping must lie in (0,1]");
    FixedPointReport rep;
    rep.solution = std::move(x0);
    for (double v : rep.solution)
        if (!std::isfinite(v)) throw ParameterError("fixed_point_solve: non-finite starting point");
    for (int it = 1; it <= opt.max_iter; ++it) {
        Vec fx = map(rep.solution);
        if (fx.size() != rep.solution.size()) throw ParameterError("fixed_point_solve: map changed dimension");
        double res = 0.0;
        Vec next(fx.size());
        for (std::size_t i = 0; i < fx.size(); ++i) {
            next[i] = (1.0 - opt.damping) * rep.solution[i] + opt.damping * fx[i];
            if (!std::isfinite(next[i])) throw DivergenceError("fixed_point_solve: non-finite iterate", rep.solution, it);
            res = std::max(res, std::abs(next[i] - rep.solution[i]));
        }
        rep.solution = std::move(next);
        rep.iterations = it;
        rep.residual = res;
        if (res <= opt.tol) {
            rep.converged = true;
            return rep;
        }
    }
    return rep;
}

ScalarMin minimize_scalar(const std::function<double(double)>& f, double lo, double hi, double tol) {
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) throw ParameterError("minimize_scalar: degenerate bracket");
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc <= fd) {
            b = d, d = c, fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c, c = d, fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    double x = 0.5 * (a + b), fx = f(x);
    // endpoints can win for monotone f
    for (double e : {lo, hi}) {
        const double fe = f(e);
        if (fe < fx) x = e, fx = fe;
    }
    return {x, fx};
}

namespace {

double checked(const std::function<double(const Vec&)>& f, const Vec& x, int& evals) {
    ++evals;
    const double v = f(x);
    if (!std::isfinite(v)) throw EvaluationError("minimize_simplex: objective returned a non-finite value");
    return v;
}

void nelder_mead(const std::function<double(const Vec&)>& f, std::vector<Vec>& pts, Vec& vals, double tol,
                 int max_iter, int& evals) {
    const std::size_t n = pts.size() - 1;
    std::vector<std::size_t> order(n + 1);
    for (int it = 0; it < max_iter; ++it) {
        for (std::size_t i = 0; i <= n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        const std::size_t best = order[0], worst = order[n], second = order[n - 1];
        double diam = 0.0;
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                diam = std::max(diam, std::abs(pts[i][k] - pts[best][k]) / (1.0 + std::abs(pts[best][k])));
        if (vals[worst] - vals[best] <= tol * (1.0 + std::abs(vals[best])) && diam <= 1e-3 * std::sqrt(tol)) break;

        Vec centroid(n, 0.0);
        for (std::size_t i = 0; i <= n; ++i)
            if (i != worst)
                for (std::size_t k = 0; k < n; ++k) centroid[k] += pts[i][k] / static_cast<double>(n);
        auto along = [&](double t) {
            Vec p(n);
            for (std::size_t k = 0; k < n; ++k) p[k] = centroid[k] + t * (pts[worst][k] - centroid[k]);
            return p;
        };
        Vec xr = along(-1.0);
        const double fr = checked(f, xr, evals);
        if (fr < vals[best]) {
            Vec xe = along(-2.0);
            const double fe = checked(f, xe, evals);
            if (fe < fr) pts[worst] = std::move(xe), vals[worst] = fe;
            else pts[worst] = std::move(xr), vals[worst] = fr;
        } else if (fr < vals[second]) {
            pts[worst] = std::move(xr), vals[worst] = fr;
        } else {
            const bool outside = fr < vals[worst];
            Vec xc = along(outside ? -0.5 : 0.5);
            const double fcv = checked(f, xc, evals);
            if (fcv < (outside ? fr : vals[worst])) {
                pts[worst] = std::move(xc), vals[worst] = fcv;
            } else {
                for (std::size_t i = 0; i <= n; ++i) {
                    if (i == best) continue;
                    for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[best][k] + 0.5 * (pts[i][k] - pts[best][k]);
                    vals[i] = checked(f, pts[i], evals);
                }
            }
        }
    }
}

}  // namespace

SimplexMin minimize_simplex(const std::function<double(const Vec&)>& f, const Vec& x0, const SimplexOptions& opt) {
    const std::size_t n = x0.size();
    if (n == 0 || n > 6) throw ParameterError("minimize_simplex: dimension must lie in [1, 6]");
    int evals = 0;
    Vec best = x0;
    double fbest = checked(f, x0, evals);
    std::mt19937_64 gen(opt.seed);
    std::uniform_real_distribution<double> jitter(0.5, 1.5);
    for (int round = 0; round <= opt.restarts; ++round) {
        std::vector<Vec> pts(n + 1, best);
        Vec vals(n + 1, fbest);
        for (std::size_t k = 0; k < n; ++k) {
            double h = opt.scale * (round == 0 ? 1.0 : jitter(gen)) * (1.0 + 0.1 * std::abs(best[k]));
            if (round > 0 && (gen() & 1u)) h = -h;
            pts[k + 1][k] += h;
            vals[k + 1] = checked(f, pts[k + 1], evals);
        }
        nelder_mead(f, pts, vals, opt.tol, opt.max_iter, evals);
        for (std::size_t i = 0; i <= n; ++i)
            if (vals[i] < fbest) fbest = vals[i], best = pts[i];
    }
    return {best, fbest, evals};
}

double find_root(const std::function<double(double)>& f, double lo, double hi, double rel_tol, int max_iter) {
    double flo = f(lo), fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if (!std::isfinite(flo) || !std::isfinite(fhi) || (flo > 0) == (fhi > 0))
        throw NumericError("find_root: bracket does not contain a sign change");
    const int bits = std::max(8, std::min(52, static_cast<int>(-std::log2(rel_tol))));
    boost::math::tools::eps_tolerance<double> tol(bits);
    std::uintmax_t iters = static_cast<std::uintmax_t>(max_iter);
    auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, iters);
    return 0.5 * (a + b);
}

double find_root_positive(const std::function<double(double)>& f, double guess, double rel_tol) {
    if (!(guess > 0.0) || !std::isfinite(guess)) guess = 1.0;
    double lo = guess, hi = guess;
    double flo = f(lo), fhi = flo;
    if (flo == 0.0) return guess;
    for (int k = 0; k < 400; ++k) {
        lo /= 2.0, hi *= 2.0;
        const double nlo = f(lo), nhi = f(hi);
        if (std::isfinite(nlo) && (nlo > 0) != (flo > 0)) {
            const double h = lo * 2.0;
            return find_root(f, lo, h, rel_tol);
        }
        if (std::isfinite(nhi) && (nhi > 0) != (fhi > 0)) {
            const double l = hi / 2.0;
            return find_root(f, l, hi, rel_tol);
        }
        if (!std::isfinite(nlo) && !std::isfinite(nhi)) break;
        flo = std::isfinite(nlo) ? nlo : flo;
        fhi = std::isfinite(nhi) ? nhi : fhi;
        if (lo < 1e-300 && hi > 1e300) break;
    }
    throw NumericError("find_root_positive: no sign change found");
}

}  // namespace tokenlab
