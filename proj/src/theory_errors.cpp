#include "tokenlab/theory_errors.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "tokenlab/errors.hpp"
#include "tokenlab/kernels.hpp"

namespace tokenlab {

std::string to_string(TheoryModel m) {
    switch (m) {
        case TheoryModel::attention: return "attention";
        case TheoryModel::pooled: return "pooled";
        case TheoryModel::vectorized: return "vectorized";
    }
    return "?";
}

TheoryModel parse_theory_model(std::string_view s) {
    if (s == "attention") return TheoryModel::attention;
    if (s == "pooled") return TheoryModel::pooled;
    if (s == "vectorized") return TheoryModel::vectorized;
    throw ParameterError("unknown theory model: " + std::string(s));
}

// ---------------------------------------------------------------- scalar law

ScalarLaw sample_scalar_law(double gamma, double q_norm, double beta, const TaskConfig& cfg, std::size_t n_mc,
                            Rng& rng) {
    cfg.validate();
    if (!(std::abs(gamma) <= 1.0)) throw ParameterError("scalar law: |gamma| must be <= 1");
    if (!(q_norm >= 0.0) || !std::isfinite(q_norm)) throw ParameterError("scalar law: q_norm must be >= 0");
    if (!std::isfinite(beta)) throw ParameterError("scalar law: beta must be finite");
    if (n_mc == 0) throw ParameterError("scalar law: n_mc must be > 0");

    ScalarLaw law;
    law.gamma = gamma, law.q_norm = q_norm, law.beta = beta, law.cfg = cfg;
    law.degenerate = std::abs(gamma) == 1.0;
    law.high_variance = n_mc < 1000;
    for (Vec* v : {&law.y, &law.gs, &law.vs, &law.sn, &law.z0, &law.c_q, &law.c_xi, &law.c_z}) v->resize(n_mc);

    const int L = cfg.L;
    const double temp = beta * q_norm;
    const double r = law.degenerate ? 0.0 : 1.0 / std::sqrt(1.0 - gamma * gamma);
    Vec g(L), a(L);
    for (std::size_t i = 0; i < n_mc; ++i) {
        const bool pos = rng.bernoulli(cfg.pi);
        for (int l = 0; l < L; ++l) g[l] = rng.normal();
        std::vector<std::uint8_t> v;
        if (pos) v = sample_location(cfg, rng);
        for (int l = 0; l < L; ++l) a[l] = g[l] + (pos && v[l] ? gamma * cfg.theta : 0.0);
        kernels::softmax(a.data(), L, temp);
        double gs = 0.0, vs = 0.0, s2 = 0.0;
        for (int l = 0; l < L; ++l) {
            gs += g[l] * a[l];
            if (pos && v[l]) vs += cfg.theta * a[l];
            s2 += a[l] * a[l];
        }
        const double sn = std::sqrt(s2), z0 = rng.normal();
        law.y[i] = pos ? 1.0 : -1.0;
        law.gs[i] = gs, law.vs[i] = vs, law.sn[i] = sn, law.z0[i] = z0;
        law.c_z[i] = sn;
        if (law.degenerate) {
            law.c_q[i] = gs + gamma * vs;
            law.c_xi[i] = 0.0;
        } else {
            law.c_q[i] = gs - gamma * sn * z0 * r;
            law.c_xi[i] = vs + sn * z0 * r;
        }
        law.n_pos += pos;
    }
    return law;
}

FeatureLaw attention_feature_law(const ScalarLaw& law) {
    const std::size_t n = law.size(), n_neg = n - law.n_pos;
    const double pi = law.cfg.pi;
    if ((pi > 0.0 && law.n_pos == 0) || (pi < 1.0 && n_neg == 0))
        throw ParameterError("attention law: a label with positive probability has no samples");
    FeatureLaw f;
    f.p = law.degenerate ? 1 : 2;
    f.pi = pi;
    f.y = law.y, f.c_z = law.c_z;
    f.weight.resize(n);
    f.c.resize(n * f.p);
    for (std::size_t i = 0; i < n; ++i) {
        f.weight[i] = law.y[i] > 0 ? pi / law.n_pos : (1.0 - pi) / n_neg;
        f.c[i * f.p] = law.c_q[i];
        if (f.p == 2) f.c[i * f.p + 1] = law.c_xi[i];
    }
    f.noise_cov.assign(f.p * f.p, 0.0);
    if (f.p == 2) f.gram = {1.0, law.gamma, law.gamma, 1.0};
    else f.gram = {1.0};
    return f;
}

namespace {

FeatureLaw two_atom_law(double pi, double c_pos, double cz, double noise_var, double alpha_scale) {
    FeatureLaw f;
    f.p = 1;
    f.pi = pi;
    f.y = {1.0, -1.0};
    f.weight = {pi, 1.0 - pi};
    f.c_z = {cz, cz};
    f.c = {c_pos, 0.0};
    f.noise_cov = {noise_var};
    f.gram = {1.0};
    f.alpha_scale = alpha_scale;
    return f;
}

// Unit direction of the token-level signal in the vectorized model: m_k is
// proportional to it under the symmetry of the location law.
Vec token_direction(const TaskConfig& cfg) {
    Vec u(cfg.L, 0.0);
    if (cfg.location_law == LocationLaw::fixed_window) {
        for (int k = 0; k < cfg.R; ++k) u[k] = 1.0 / std::sqrt(static_cast<double>(cfg.R));
    } else {
        for (double& t : u) t = 1.0 / std::sqrt(static_cast<double>(cfg.L));
    }
    return u;
}

}  // namespace

FeatureLaw pooled_feature_law(const TaskConfig& cfg) {
    cfg.validate();
    const double L = cfg.L;
    return two_atom_law(cfg.pi, cfg.theta * cfg.R / L, 1.0 / std::sqrt(L), 1.0 / L, 1.0);
}

FeatureLaw vectorized_feature_law(const TaskConfig& cfg) {
    cfg.validate();
    // <theta v, u> is the same for every admissible v under both location laws
    const Vec u = token_direction(cfg);
    double vu = 0.0;
    for (int k = 0; k < cfg.R; ++k) vu += u[cfg.location_law == LocationLaw::fixed_window ? k : 0];
    return two_atom_law(cfg.pi, cfg.theta * vu, 1.0, 1.0, 1.0 / cfg.L);
}

// ------------------------------------------------------------ expectations

namespace {

struct Sums {
    double s_nu = 0.0;    // E[z* (z* - c_z nu Z) / c_z^2]
    double s_chi = 0.0;   // E[l'' c_z^2 / (1 + l'' c_z^2 chi)]
    double s_loss = 0.0;  // E[l(z* + eps, y)]
    double s_zl = 0.0;    // E[|z* l'(z* + eps, y)|]
    // partial derivatives of s_nu and s_chi in nu and chi
    double nu_dnu = 0.0, nu_dchi = 0.0, chi_dnu = 0.0, chi_dchi = 0.0;
};

double quad_form(const Vec& A, const Vec& mu, int p) {
    double s = 0.0;
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) s += mu[i] * A[i * p + j] * mu[j];
    return s;
}

double inplane(const FeatureLaw& law, std::size_t a, const Vec& mu) {
    double s = 0.0;
    for (int k = 0; k < law.p; ++k) s += law.c[a * law.p + k] * mu[k];
    return s;
}

// Only x + eps enters the prox of the shifted loss, so the Gaussian part of
// eps and c_z nu Z collapse into one variable w; E[eps | w] is linear in w.
// With derivs the partials in (nu, chi) come from implicit differentiation of
// the prox: du/dw = 1/D, du/dtau = -l'/D, D = 1 + tau l''.
Sums expectations(const FeatureLaw& law, const Vec& mu, double b, double nu, double chi, const LossSpec& loss,
                  const QuadratureRule& gh, bool derivs = false) {
    if (!std::isfinite(nu) || !std::isfinite(chi)) throw NumericError("fixed point: iterate left the finite range");
    const double sig2 = std::max(0.0, quad_form(law.noise_cov, mu, law.p));
    Sums s;
    for (std::size_t a = 0; a < law.atoms(); ++a) {
        const double w = law.weight[a];
        if (w == 0.0) continue;
        const double y = law.y[a], cz = law.c_z[a], cz2 = cz * cz, tau = cz2 * chi;
        const double eps0 = inplane(law, a, mu) + b;
        const double var_w = sig2 + cz2 * nu * nu, sd_w = std::sqrt(var_w);
        const double k_eps = var_w > 0.0 ? sig2 / var_w : 0.0;
        const double dsd = sd_w > 0.0 ? cz2 * nu / sd_w : 0.0;   // d sd_w / d nu
        const double dk = sd_w > 0.0 ? -sig2 / var_w * dsd : 0.0;  // d (k_eps sd_w) / d nu
        double t_nu = 0.0, t_chi = 0.0, t_loss = 0.0, t_zl = 0.0;
        double t_nn = 0.0, t_nc = 0.0, t_cn = 0.0, t_cc = 0.0;
        for (std::size_t k = 0; k < gh.size(); ++k) {
            const double t = gh.nodes[k];
            const double dw = sd_w * t;
            const double u = prox(loss, y, eps0 + dw, tau);
            const double z = u - eps0 - k_eps * dw;  // E[z* | w]
            const double r = u - eps0 - dw;          // z* - x
            const auto lv = loss_eval(loss, u, y);
            const double D = 1.0 + lv.d2 * tau;
            const double wk = gh.weights[k];
            t_nu += wk * z * r;
            t_chi += wk * lv.d2 / D;
            t_loss += wk * lv.value;
            t_zl += wk * std::abs(z * lv.d1);
            if (!derivs) continue;
            const double dw_n = t * dsd;
            const double du_n = dw_n / D, du_c = -lv.d1 * cz2 / D;
            const double dz_n = du_n - t * dk;
            t_nn += wk * (dz_n * r + z * (du_n - dw_n));
            t_nc += wk * (du_c * r + z * du_c);
            const double d3 = loss_d3(loss, u, y);
            // f = l''/(1 + l'' tau): df = dl''/D^2 - l''^2 dtau/D^2
            t_cn += wk * d3 * du_n / (D * D);
            t_cc += wk * (d3 * du_c - lv.d2 * lv.d2 * cz2) / (D * D);
        }
        s.s_nu += w * t_nu / cz2;
        s.s_chi += w * t_chi * cz2;
        s.s_loss += w * t_loss;
        s.s_zl += w * t_zl;
        if (derivs) {
            s.nu_dnu += w * t_nn / cz2;
            s.nu_dchi += w * t_nc / cz2;
            s.chi_dnu += w * t_cn * cz2;
            s.chi_dchi += w * t_cc * cz2;
        }
    }
    return s;
}

double effective_alpha(const FeatureLaw& law, double alpha) { return alpha * law.alpha_scale; }

}  // namespace

FixedPointResiduals fixed_point_residuals(const FeatureLaw& law, const Vec& mu, double b, double nu, double chi,
                                          double alpha, double lambda, const LossSpec& loss, int hermite_order) {
    const auto& gh = gauss_hermite_cached(hermite_order);
    const Sums s = expectations(law, mu, b, nu, chi, loss, gh);
    const double a = effective_alpha(law, alpha);
    // lambda nu^2 = -E[z* l'] is the nu equation multiplied through by lambda chi
    // (z* - x = -c_z^2 chi l' at the prox).
    const double lhs = lambda * chi * nu * nu;
    const double scale = std::max({lhs, s.s_zl * chi, std::numeric_limits<double>::min()});
    FixedPointResiduals r;
    r.nu = std::abs(lhs - s.s_nu) / scale;
    r.chi = std::abs(1.0 - a * chi * (s.s_chi + lambda));
    r.phi = s.s_loss + 0.5 * lambda * nu * nu;
    return r;
}

InnerSolution inner_fixed_point(const FeatureLaw& law, const Vec& mu, double b, double alpha, double lambda,
                                const LossSpec& loss, const InnerOptions& opt, const InnerSolution* warm) {
    if (!(lambda > 0.0)) throw ParameterError("inner_fixed_point: lambda must be > 0");
    if (!(alpha > 0.0)) throw ParameterError("inner_fixed_point: alpha must be > 0");
    if (law.atoms() == 0) throw ParameterError("inner_fixed_point: empty law");
    if (static_cast<int>(mu.size()) != law.p) throw ParameterError("inner_fixed_point: mu has the wrong size");
    const auto& gh = gauss_hermite_cached(opt.hermite_order);
    const double a = effective_alpha(law, alpha);

    double nu = warm && warm->nu > 0.0 ? warm->nu : 1.0;
    double chi = warm && warm->chi > 0.0 ? warm->chi : 1.0;
    InnerSolution out;
    int it = 0;
    // alternating exact 1-d solves bring the iterate into Newton's basin
    auto alternate = [&] {
        for (; it < opt.max_iter; ++it) {
            const double chi_new = find_root_positive(
                [&](double c) {
                    const Sums s = expectations(law, mu, b, nu, c, loss, gh);
                    return 1.0 - a * c * (s.s_chi + lambda);
                },
                chi, 1e-8);
            const double nu_new = find_root_positive(
                [&](double n) {
                    const Sums s = expectations(law, mu, b, n, chi_new, loss, gh);
                    return lambda * chi_new - s.s_nu / (n * n);
                },
                nu, 1e-8);
            const double change = std::max(std::abs(chi_new / chi - 1.0), std::abs(nu_new / nu - 1.0));
            chi = chi_new, nu = nu_new;
            if (change < 1e-4) break;
        }
    };
    // Newton in (log nu, log chi) with the analytic Jacobian
    auto newton = [&] {
        Sums s = expectations(law, mu, b, nu, chi, loss, gh, true);
        auto residual = [&](const Sums& e, double n, double c) {
            return std::array<double, 2>{1.0 - e.s_nu / (lambda * c * n * n), 1.0 - a * c * (e.s_chi + lambda)};
        };
        auto g = residual(s, nu, chi);
        double gnorm = std::max(std::abs(g[0]), std::abs(g[1]));
        for (int k = 0; k < 60 && it < opt.max_iter; ++k, ++it) {
            if (gnorm < opt.tol) break;
            const double q = lambda * chi * nu * nu;
            const double j00 = -(nu * s.nu_dnu - 2.0 * s.s_nu) / q;
            const double j01 = -(chi * s.nu_dchi - s.s_nu) / q;
            const double j10 = -a * chi * nu * s.chi_dnu;
            const double j11 = -a * chi * (s.s_chi + lambda) - a * chi * chi * s.chi_dchi;
            const double det = j00 * j11 - j01 * j10;
            if (!(std::abs(det) > 0.0) || !std::isfinite(det)) break;
            double dn = -(j11 * g[0] - j01 * g[1]) / det;
            double dc = -(-j10 * g[0] + j00 * g[1]) / det;
            // keep each step within a factor e^2
            const double big = std::max(std::abs(dn), std::abs(dc));
            if (big > 2.0) dn *= 2.0 / big, dc *= 2.0 / big;
            double t = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
                const double n2 = nu * std::exp(t * dn), c2 = chi * std::exp(t * dc);
                const Sums s2 = expectations(law, mu, b, n2, c2, loss, gh, true);
                const auto g2 = residual(s2, n2, c2);
                const double gn2 = std::max(std::abs(g2[0]), std::abs(g2[1]));
                if (gn2 < gnorm) {
                    nu = n2, chi = c2, g = g2, gnorm = gn2, s = s2, moved = true;
                    break;
                }
            }
            if (!moved) break;
        }
        return gnorm;
    };

    double gnorm = std::numeric_limits<double>::infinity();
    try {
        gnorm = newton();
    } catch (const NumericError&) {
    }
    if (!(gnorm < opt.tol)) {
        nu = 1.0, chi = 1.0;
        alternate();
        gnorm = newton();
    }

    out.nu = nu, out.chi = chi, out.iterations = it;
    const auto r = fixed_point_residuals(law, mu, b, nu, chi, alpha, lambda, loss, opt.hermite_order);
    out.residual_nu = r.nu, out.residual_chi = r.chi, out.phi = r.phi;
    out.converged = std::isfinite(nu) && std::isfinite(chi) && gnorm <= 10.0 * opt.tol;
    return out;
}

InnerSolution inner_fixed_point(double mu_q, double mu_xi, double b, const ScalarLaw& law, double alpha1,
                                double lambda, const LossSpec& loss, const InnerOptions& opt) {
    const FeatureLaw f = attention_feature_law(law);
    Vec mu = f.p == 2 ? Vec{mu_q, mu_xi} : Vec{mu_q + law.gamma * mu_xi};
    return inner_fixed_point(f, mu, b, alpha1, lambda, loss, opt);
}

double quadratic_chi(const FeatureLaw& law, double alpha, double lambda) {
    if (!(alpha > 0.0) || lambda < 0.0) throw ParameterError("quadratic_chi: need alpha > 0 and lambda >= 0");
    const double a = effective_alpha(law, alpha);
    if (lambda == 0.0 && !(a > 1.0))
        throw ParameterError("quadratic_chi: ridgeless chi exists only for an effective ratio above 1");
    return find_root_positive(
        [&](double chi) {
            double s = 0.0;
            for (std::size_t i = 0; i < law.atoms(); ++i) {
                const double t = law.c_z[i] * law.c_z[i] * chi;
                s += law.weight[i] * t / (1.0 + t);
            }
            return 1.0 - a * (s + lambda * chi);
        },
        1.0, 1e-15);
}

// ------------------------------------------------------------- outer problem

namespace {

Vec inverse_gram(const FeatureLaw& law) {
    if (law.p == 1) return {1.0 / law.gram[0]};
    const double det = law.gram[0] * law.gram[3] - law.gram[1] * law.gram[2];
    if (!(det > 0.0)) throw ParameterError("outer problem: in-plane Gram matrix is singular");
    return {law.gram[3] / det, -law.gram[1] / det, -law.gram[2] / det, law.gram[0] / det};
}

struct OuterPoint {
    Vec mu;
    double b = 0.0;
    InnerSolution inner;
    double value = 0.0;
    int evaluations = 0;
};

// Quadratic loss: phi = E[(y - eps)^2 / (2 D)], D = 1 + c_z^2 chi, and the
// outer problem is a linear system in (mu, b).
OuterPoint solve_quadratic(const FeatureLaw& law, double alpha, double lambda, int hermite_order) {
    const int p = law.p, n = p + 1;
    const double chi = quadratic_chi(law, alpha, lambda);
    const Vec Kinv = inverse_gram(law);
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd ch(n);
    for (std::size_t a = 0; a < law.atoms(); ++a) {
        const double wD = law.weight[a] / (1.0 + law.c_z[a] * law.c_z[a] * chi);
        for (int k = 0; k < p; ++k) ch[k] = law.c[a * p + k];
        ch[p] = 1.0;
        M.noalias() += wD * ch * ch.transpose();
        rhs += wD * law.y[a] * ch;
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j) M(i, j) += wD * law.noise_cov[i * p + j];
    }
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) M(i, j) += lambda * Kinv[i * p + j];
    const Eigen::VectorXd th = M.ldlt().solve(rhs);
    if (!th.allFinite()) throw NumericError("quadratic outer problem: singular system");

    OuterPoint o;
    o.mu.assign(th.data(), th.data() + p);
    o.b = th[p];
    const double sig2 = quad_form(law.noise_cov, o.mu, p);
    double er2 = 0.0, ecz = 0.0, phi = 0.0;
    for (std::size_t a = 0; a < law.atoms(); ++a) {
        const double cz2 = law.c_z[a] * law.c_z[a], D = 1.0 + cz2 * chi;
        const double r = law.y[a] - inplane(law, a, o.mu) - o.b;
        const double r2 = r * r + sig2;
        er2 += law.weight[a] * cz2 * r2 / (D * D);
        ecz += law.weight[a] * cz2 / (D * D);
        phi += law.weight[a] * 0.5 * r2 / D;
    }
    const double nu2 = chi * er2 / (lambda + ecz);
    o.inner.nu = std::sqrt(std::max(0.0, nu2));
    o.inner.chi = chi;
    o.inner.phi = phi;
    o.value = phi + 0.5 * lambda * quad_form(Kinv, o.mu, p);
    const auto r = fixed_point_residuals(law, o.mu, o.b, o.inner.nu, chi, alpha, lambda, LossSpec{LossKind::quadratic},
                                         hermite_order);
    o.inner.residual_nu = r.nu, o.inner.residual_chi = r.chi;
    o.inner.converged = r.nu <= 1e-7 && r.chi <= 1e-7;
    o.evaluations = 1;
    return o;
}

// Damped Newton with a central-difference Hessian. The outer objective is a
// partial minimum of a convex problem, hence convex; this polishes the
// simplex point, whose accuracy is limited by its flat valleys.
Vec newton_polish(const std::function<double(const Vec&)>& f, Vec x, int& evals) {
    const int n = static_cast<int>(x.size());
    double fx = f(x);
    ++evals;
    for (int it = 0; it < 30; ++it) {
        Eigen::VectorXd h(n), g(n);
        Eigen::MatrixXd H(n, n);
        Vec fp(n), fm(n);
        for (int i = 0; i < n; ++i) {
            h[i] = 1e-4 * (1.0 + std::abs(x[i]));
            Vec xp = x, xm = x;
            xp[i] += h[i], xm[i] -= h[i];
            fp[i] = f(xp), fm[i] = f(xm);
            g[i] = (fp[i] - fm[i]) / (2.0 * h[i]);
            H(i, i) = (fp[i] - 2.0 * fx + fm[i]) / (h[i] * h[i]);
        }
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                Vec xpp = x, xmm = x, xpm = x, xmp = x;
                xpp[i] += h[i], xpp[j] += h[j];
                xmm[i] -= h[i], xmm[j] -= h[j];
                xpm[i] += h[i], xpm[j] -= h[j];
                xmp[i] -= h[i], xmp[j] += h[j];
                H(i, j) = H(j, i) = (f(xpp) + f(xmm) - f(xpm) - f(xmp)) / (4.0 * h[i] * h[j]);
            }
        evals += 2 * n + 2 * n * (n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
        const double floor = 1e-12 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
        const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(floor);
        const Eigen::VectorXd step =
            -eig.eigenvectors() * (eig.eigenvectors().transpose() * g).cwiseQuotient(ev);
        const double decrement = -g.dot(step);
        if (!(decrement > 1e-15 * (1.0 + std::abs(fx)))) break;
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
            Vec xn = x;
            for (int i = 0; i < n; ++i) xn[i] += t * step[i];
            double fn;
            try {
                fn = f(xn);
            } catch (const NumericError&) {
                continue;
            }
            ++evals;
            if (fn < fx) {
                x = xn, fx = fn, moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    return x;
}

OuterPoint solve_outer(const FeatureLaw& law, double alpha, double lambda, const LossSpec& loss,
                       const TheoryOptions& opt) {
    if (loss.kind == LossKind::quadratic && opt.closed_quadratic)
        return solve_quadratic(law, alpha, lambda, opt.inner.hermite_order);
    if (!(lambda > 0.0)) throw ParameterError("outer_minimize: lambda must be > 0");
    const int p = law.p;
    const Vec Kinv = inverse_gram(law);
    InnerSolution warm;
    bool have_warm = false;
    auto value_with = [&](const Vec& x, const InnerOptions& io) {
        const Vec mu(x.begin(), x.begin() + p);
        const InnerSolution s = inner_fixed_point(law, mu, x[p], alpha, lambda, loss, io, have_warm ? &warm : nullptr);
        warm = s, have_warm = true;
        return s.phi + 0.5 * lambda * quad_form(Kinv, mu, p);
    };
    InnerOptions coarse = opt.inner;
    coarse.tol = std::max(opt.inner.tol, 1e-10);
    auto objective = [&](const Vec& x) {
        try {
            return value_with(x, coarse);
        } catch (const NumericError&) {
            return std::numeric_limits<double>::max();
        }
    };
    Vec x0(p + 1, 0.0);
    if (static_cast<int>(opt.start.size()) == p + 1) {
        x0 = opt.start;
    } else {
        const double pi = std::clamp(law.pi, 1e-6, 1.0 - 1e-6);
        x0[p] = normal_quantile(pi);
    }
    const SimplexMin m = minimize_simplex(objective, x0, opt.simplex);
    int evals = m.evaluations;
    const Vec x = newton_polish([&](const Vec& y) { return value_with(y, opt.inner); }, m.argmin, evals);
    OuterPoint o;
    o.mu.assign(x.begin(), x.begin() + p);
    o.b = x[p];
    o.inner = inner_fixed_point(law, o.mu, o.b, alpha, lambda, loss, opt.inner, have_warm ? &warm : nullptr);
    o.value = o.inner.phi + 0.5 * lambda * quad_form(Kinv, o.mu, p);
    o.evaluations = evals;
    return o;
}

void fill_common(TheorySolution& s, const OuterPoint& o, double alpha, double lambda) {
    s.alpha = alpha, s.lambda = lambda;
    s.nu = o.inner.nu, s.chi = o.inner.chi;
    s.e_train = o.value;
    s.residual_nu = o.inner.residual_nu, s.residual_chi = o.inner.residual_chi;
    s.converged = o.inner.converged;
    s.evaluations = o.evaluations;
}

// pooled / vectorized: score | atom ~ N(c mu + b, sigma(mu)^2 + c_z^2 nu^2)
double two_atom_test_error(const FeatureLaw& law, double mu, double b, double nu) {
    double e = 0.0;
    for (std::size_t a = 0; a < law.atoms(); ++a) {
        const double sd = std::sqrt(law.noise_cov[0] * mu * mu + law.c_z[a] * law.c_z[a] * nu * nu);
        const double m = law.c[a] * mu + b;
        const double err = sd > 0.0 ? normal_cdf(-law.y[a] * m / sd) : (law.y[a] * m > 0.0 ? 0.0 : 1.0);
        e += law.weight[a] * err;
    }
    return e;
}

}  // namespace

double derived_mu3(double nu, double mu1, double mu2, double gamma, bool degenerate) {
    double rad = nu * nu;
    if (!degenerate) rad += (mu1 * mu1 + mu2 * mu2 - 2.0 * gamma * mu1 * mu2) / (1.0 - gamma * gamma) - mu1 * mu1;
    if (rad < -1e-10) throw NumericError("mu3: negative radicand");
    return std::sqrt(std::max(0.0, rad));
}

ErrorEstimate test_error_formula(double mu1, double mu2, double mu3, double b, const ScalarLaw& law) {
    if (!(mu3 > 0.0)) throw ParameterError("test_error_formula: mu3 must be > 0");
    double sp = 0.0, sp2 = 0.0, sm = 0.0, sm2 = 0.0;
    std::size_t np = 0, nm = 0;
    for (std::size_t i = 0; i < law.size(); ++i) {
        if (law.y[i] > 0) {
            const double e = normal_cdf((-b - law.vs[i] * mu2 - law.gs[i] * mu1) / (mu3 * law.sn[i]));
            sp += e, sp2 += e * e, ++np;
        } else {
            const double e = normal_cdf((b + law.gs[i] * mu1) / (mu3 * law.sn[i]));
            sm += e, sm2 += e * e, ++nm;
        }
    }
    const double pi = law.cfg.pi;
    double rate = 0.0, var = 0.0;
    if (np) {
        const double m = sp / np;
        rate += pi * m;
        var += pi * pi * std::max(0.0, sp2 / np - m * m) / np;
    }
    if (nm) {
        const double m = sm / nm;
        rate += (1.0 - pi) * m;
        var += (1.0 - pi) * (1.0 - pi) * std::max(0.0, sm2 / nm - m * m) / nm;
    }
    return {rate, std::sqrt(var)};
}

ErrorEstimate test_error_formula(double mu1, double mu2, double mu3, double b, double gamma, double q_norm,
                                 double beta, const TaskConfig& cfg, std::size_t n_mc, Rng& rng) {
    if (!(mu3 > 0.0)) throw ParameterError("test_error_formula: mu3 must be > 0");
    return test_error_formula(mu1, mu2, mu3, b, sample_scalar_law(gamma, q_norm, beta, cfg, n_mc, rng));
}

TheorySolution outer_minimize(const ScalarLaw& law, double alpha1, double lambda, const LossSpec& loss,
                              const TheoryOptions& opt) {
    const FeatureLaw f = attention_feature_law(law);
    const OuterPoint o = solve_outer(f, alpha1, lambda, loss, opt);
    TheorySolution s;
    s.model = TheoryModel::attention;
    fill_common(s, o, alpha1, lambda);
    s.mu1 = o.mu[0];
    s.mu2 = f.p == 2 ? o.mu[1] : law.gamma * o.mu[0];
    s.b_hat = o.b;
    s.mu3 = derived_mu3(s.nu, s.mu1, s.mu2, law.gamma, law.degenerate);
    if (s.mu3 > 0.0) {
        const auto e = test_error_formula(s.mu1, s.mu2, s.mu3, s.b_hat, law);
        s.e_test = e.rate, s.e_test_se = e.std_err;
    } else {
        s.e_test = std::numeric_limits<double>::quiet_NaN();
    }
    return s;
}

TheorySolution pooled_theory(const TaskConfig& cfg, double alpha1, double lambda, const LossSpec& loss,
                             const TheoryOptions& opt) {
    const FeatureLaw f = pooled_feature_law(cfg);
    const OuterPoint o = solve_outer(f, alpha1, lambda, loss, opt);
    TheorySolution s;
    s.model = TheoryModel::pooled;
    fill_common(s, o, alpha1, lambda);
    s.mu1 = 0.0, s.mu2 = o.mu[0], s.b_hat = o.b;
    s.mu3 = std::hypot(s.nu, s.mu2);
    s.e_test = two_atom_test_error(f, s.mu2, s.b_hat, s.nu);
    return s;
}

TheorySolution vectorized_theory(const TaskConfig& cfg, double alpha, double lambda, const LossSpec& loss,
                                 const TheoryOptions& opt) {
    if (!(alpha > 0.0)) throw ParameterError("vectorized_theory: alpha must be > 0");
    const FeatureLaw f = vectorized_feature_law(cfg);
    const OuterPoint o = solve_outer(f, alpha, lambda, loss, opt);
    TheorySolution s;
    s.model = TheoryModel::vectorized;
    fill_common(s, o, alpha, lambda);
    s.mu1 = 0.0, s.mu2 = o.mu[0], s.b_hat = o.b;
    s.mu3 = std::hypot(s.nu, s.mu2);
    s.e_test = two_atom_test_error(f, s.mu2, s.b_hat, s.nu);
    const Vec u = token_direction(cfg);
    s.m_token.resize(cfg.L);
    for (int k = 0; k < cfg.L; ++k) s.m_token[k] = cfg.theta * u[k] * s.mu2;
    return s;
}

namespace {

TheorySolution solve_model(TheoryModel model, const TaskConfig& cfg, const ScalarLaw* law, double alpha,
                           double lambda, const LossSpec& loss, const TheoryOptions& opt) {
    switch (model) {
        case TheoryModel::attention:
            if (!law) throw ParameterError("attention theory needs a scalar law");
            return outer_minimize(*law, alpha, lambda, loss, opt);
        case TheoryModel::pooled: return pooled_theory(cfg, alpha, lambda, loss, opt);
        case TheoryModel::vectorized: return vectorized_theory(cfg, alpha, lambda, loss, opt);
    }
    throw ParameterError("unknown model");
}

double richardson10(double f1, double f2, double f3) {
    // f_i at lambda = 1e-4, 1e-5, 1e-6, error assumed a lambda + c lambda^2
    const double r12 = (10.0 * f2 - f1) / 9.0, r23 = (10.0 * f3 - f2) / 9.0;
    return (100.0 * r23 - r12) / 99.0;
}

Vec outer_point(const TheorySolution& s, const ScalarLaw* law) {
    if (s.model != TheoryModel::attention) return {s.mu2, s.b_hat};
    if (law && law->degenerate) return {s.mu1, s.b_hat};
    return {s.mu1, s.mu2, s.b_hat};
}

double weight_norm(const TheorySolution& s) {
    if (s.model != TheoryModel::attention) return std::hypot(s.mu2, s.nu);
    return std::hypot(s.mu3, s.mu1);
}

}  // namespace

TheorySolution ridgeless_theory(TheoryModel model, const TaskConfig& cfg, const ScalarLaw* law, double alpha,
                                const LossSpec& loss, const TheoryOptions& opt) {
    if (loss.kind == LossKind::quadratic && opt.closed_quadratic) {
        const FeatureLaw f = model == TheoryModel::attention ? attention_feature_law(*law)
                             : model == TheoryModel::pooled  ? pooled_feature_law(cfg)
                                                             : vectorized_feature_law(cfg);
        if (effective_alpha(f, alpha) > 1.0) return solve_model(model, cfg, law, alpha, 0.0, loss, opt);
    }
    // continuation in lambda, each solve started from the previous minimizer
    TheoryOptions o = opt;
    std::vector<TheorySolution> path;
    auto step = [&](double lambda) {
        path.push_back(solve_model(model, cfg, law, alpha, lambda, loss, o));
        o.start = outer_point(path.back(), law);
    };
    for (double lambda : {1e-4, 1e-5, 1e-6}) step(lambda);
    const double n1 = weight_norm(path[0]), n2 = weight_norm(path[1]), n3 = weight_norm(path[2]);
    bool all_converged = path[0].converged && path[1].converged && path[2].converged;
    // An analytic lambda-expansion shrinks the increments tenfold per decade. When the
    // norm instead keeps growing like log(1/lambda) the data are separable and the
    // ladder is continued down instead of extrapolated.
    if (n3 - n2 > 0.3 * (n2 - n1) && n3 > n2) {
        for (double lambda : {1e-7, 1e-8, 1e-9, 1e-10}) step(lambda);
        TheorySolution s = path.back();
        s.lambda = 0.0;
        s.converged = s.converged && all_converged;
        return s;
    }
    TheorySolution s3 = path[2];
    s3.e_test = richardson10(path[0].e_test, path[1].e_test, path[2].e_test);
    s3.e_train = std::max(0.0, richardson10(path[0].e_train, path[1].e_train, path[2].e_train));
    s3.lambda = 0.0;
    s3.converged = all_converged;
    return s3;
}

// ------------------------------------------------------ ridgeless quadratic

RidgelessQuadratic ridgeless_quadratic(TheoryModel model, const TaskConfig& cfg, const ScalarLaw* law) {
    cfg.validate();
    RidgelessQuadratic r;
    r.model = model;
    const double pi = cfg.pi;
    if (model != TheoryModel::attention) {
        const double X = cfg.snr();
        if (!(pi > 0.0 && pi < 1.0) || !(X > 0.0))
            throw ParameterError("ridgeless_quadratic: closed forms need pi in (0,1) and X > 0");
        const double den = 1.0 + pi * X * X * (1.0 - pi);
        const double u = 2.0 * pi * X * (1.0 - pi) / den;
        const double b = (2.0 * pi - 1.0 - pi * X * X * (1.0 - pi)) / den;
        const double a = b / u, c = -(b + X * u) / u;
        r.e_test_inf = (1.0 - pi) * normal_cdf(a) + pi * normal_cdf(c);
        const double er2 =
            1.0 + b * b - 2.0 * b * (2.0 * pi - 1.0) + u * u * (1.0 + pi * X * X) + 2.0 * X * pi * (b - 1.0) * u;
        const double slope = (-(1.0 - pi) * normal_pdf(a) * a - pi * normal_pdf(c) * c) / (2.0 * u * u);
        r.b_inf = b;
        if (model == TheoryModel::pooled) {
            r.mu2_inf = std::sqrt(static_cast<double>(cfg.L)) * u;
            r.mu3_inf = r.mu2_inf;
            r.nu2_coeff = cfg.L * er2;
            r.correction = er2 * slope;
        } else {
            r.mu2_inf = u;
            r.mu3_inf = u;
            r.nu2_coeff = cfg.L * er2;
            r.correction = cfg.L * er2 * slope;
        }
        return r;
    }

    if (!law) throw ParameterError("ridgeless_quadratic: attention needs a scalar law");
    const FeatureLaw f = attention_feature_law(*law);
    const int p = f.p, n = p + 1;
    Eigen::MatrixXd I = Eigen::MatrixXd::Zero(n, n), dI = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd J = Eigen::VectorXd::Zero(n), dJ = Eigen::VectorXd::Zero(n), ch(n);
    double ecz = 0.0;
    for (std::size_t a = 0; a < f.atoms(); ++a) {
        const double w = f.weight[a], cz2 = f.c_z[a] * f.c_z[a];
        for (int k = 0; k < p; ++k) ch[k] = f.c[a * p + k];
        ch[p] = 1.0;
        I.noalias() += w * ch * ch.transpose();
        dI.noalias() += w * cz2 * ch * ch.transpose();
        J += w * f.y[a] * ch;
        dJ -= w * cz2 * f.y[a] * ch;
        ecz += w * cz2;
    }
    dI /= ecz, dJ /= ecz;
    const auto lu = I.fullPivLu();
    if (!lu.isInvertible()) throw NumericError("ridgeless_quadratic: I_inf is singular (degenerate law)");
    const Eigen::VectorXd th = lu.solve(J);
    const Eigen::VectorXd dth = lu.solve(dJ + dI * th);

    double ecr = 0.0;
    for (std::size_t a = 0; a < f.atoms(); ++a) {
        double eps = th[p];
        for (int k = 0; k < p; ++k) eps += f.c[a * p + k] * th[k];
        const double rr = f.y[a] - eps;
        ecr += f.weight[a] * f.c_z[a] * f.c_z[a] * rr * rr;
    }
    r.nu2_coeff = ecr / (ecz * ecz);

    const double g = law->gamma;
    double mu1, mu2, d1, d2;
    if (p == 2) {
        mu1 = th[0], mu2 = th[1], d1 = dth[0], d2 = dth[1];
    } else {
        mu1 = th[0], mu2 = g * th[0], d1 = dth[0], d2 = g * dth[0];
    }
    const double b = th[p], db = dth[p];
    const double mu3 = derived_mu3(0.0, mu1, mu2, g, law->degenerate);
    if (!(mu3 > 0.0)) throw NumericError("ridgeless_quadratic: mu3_inf vanishes");
    // d(mu3^2)/d(1/alpha)
    double dm3sq = r.nu2_coeff;
    if (!law->degenerate) dm3sq += 2.0 * (mu1 * d1 + mu2 * d2 - g * (mu1 * d2 + mu2 * d1)) / (1.0 - g * g) - 2.0 * mu1 * d1;
    const double dmu3 = dm3sq / (2.0 * mu3);

    r.mu1_inf = mu1, r.mu2_inf = mu2, r.b_inf = b, r.mu3_inf = mu3;
    r.e_test_inf = test_error_formula(mu1, mu2, mu3, b, *law).rate;
    double cp = 0.0, cm = 0.0;
    std::size_t np = 0, nm = 0;
    for (std::size_t i = 0; i < law->size(); ++i) {
        const double sd = mu3 * law->sn[i];
        if (law->y[i] > 0) {
            const double num = -b - law->vs[i] * mu2 - law->gs[i] * mu1;
            const double dnum = -db - law->vs[i] * d2 - law->gs[i] * d1;
            cp += normal_pdf(num / sd) * (dnum - num * dmu3 / mu3) / sd, ++np;
        } else {
            const double num = b + law->gs[i] * mu1;
            const double dnum = db + law->gs[i] * d1;
            cm += normal_pdf(num / sd) * (dnum - num * dmu3 / mu3) / sd, ++nm;
        }
    }
    r.correction = (np ? pi * cp / np : 0.0) + (nm ? (1.0 - pi) * cm / nm : 0.0);
    return r;
}

// ---------------------------------------------------------------- capacity

double pooled_capacity_objective(double s, double b, double snr, double pi) {
    const double den = pi * gaussian_tail_moment2(b + snr * s) + (1.0 - pi) * gaussian_tail_moment2(-b);
    return (1.0 - s * s) / den;
}

namespace {

struct CapSums {
    double f = 0.0;
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
};

// E[gtm2(y (b + c.m) / c_z)] with gradient and Hessian in x = (m, b)
CapSums attention_cap_sums(const FeatureLaw& f, const Vec& x, bool derivs) {
    const int p = f.p;
    CapSums s;
    Eigen::Vector3d d = Eigen::Vector3d::Zero();
    for (std::size_t a = 0; a < f.atoms(); ++a) {
        double lin = x[p];
        for (int k = 0; k < p; ++k) lin += f.c[a * p + k] * x[k];
        const double t = f.y[a] * lin / f.c_z[a];
        const double w = f.weight[a];
        s.f += w * gaussian_tail_moment2(t);
        if (!derivs) continue;
        for (int k = 0; k < p; ++k) d[k] = f.y[a] * f.c[a * p + k] / f.c_z[a];
        d[p] = f.y[a] / f.c_z[a];
        const double g1 = 2.0 * t * normal_cdf(-t) - 2.0 * normal_pdf(t);
        const double g2 = 2.0 * normal_cdf(-t);
        for (int i = 0; i <= p; ++i) {
            s.g[i] += w * g1 * d[i];
            for (int j = 0; j <= p; ++j) s.h(i, j) += w * g2 * d[i] * d[j];
        }
    }
    return s;
}

}  // namespace

double attention_capacity_objective(const ScalarLaw& law, double m_q, double m_xi, double b) {
    const FeatureLaw f = attention_feature_law(law);
    const Vec x = f.p == 2 ? Vec{m_q, m_xi, b} : Vec{m_q + law.gamma * m_xi, b};
    return 1.0 / attention_cap_sums(f, x, false).f;
}

CapacityResult capacity(TheoryModel model, const TaskConfig& cfg, const ScalarLaw* law, bool keep_trajectory) {
    cfg.validate();
    CapacityResult r;
    r.model = model;
    if (model == TheoryModel::attention) {
        if (!law) throw ParameterError("capacity: attention needs a scalar law");
        const FeatureLaw f = attention_feature_law(*law);
        const int n = f.p + 1;
        auto obj = [&](const Vec& x) { return attention_cap_sums(f, x, false).f; };
        SimplexOptions so{0.5, 1e-12, 3000, 1, 0xca9};
        SimplexMin m = minimize_simplex(obj, Vec(n, 0.0), so);
        // the objective is convex in (m, b): polish with damped Newton
        Vec x = m.argmin;
        double fx = m.min;
        bool newton_ok = true;
        for (int it = 0; it < 50; ++it) {
            const CapSums s = attention_cap_sums(f, x, true);
            const Eigen::VectorXd g = s.g.head(n);
            if (g.norm() < 1e-13) break;
            const Eigen::VectorXd step = s.h.topLeftCorner(n, n).ldlt().solve(-g);
            if (!step.allFinite()) { newton_ok = false; break; }
            double t = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
                Vec xn = x;
                for (int i = 0; i < n; ++i) xn[i] += t * step[i];
                const double fn = obj(xn);
                if (fn <= fx) {
                    moved = fn < fx;
                    x = xn, fx = fn;
                    break;
                }
            }
            if (!moved) break;
        }
        r.alpha_star = 1.0 / fx;
        r.argmax = f.p == 2 ? x : Vec{x[0], 0.0, x[1]};
        r.converged = newton_ok && std::isfinite(r.alpha_star);
        return r;
    }

    const double X = cfg.snr(), pi = cfg.pi;
    auto sb = [](const Vec& x) { return std::array<double, 2>{std::sin(x[0]) * std::sin(x[0]), x[1]}; };
    auto obj = [&](const Vec& x) {
        const auto [s, b] = sb(x);
        if (keep_trajectory) r.trajectory.push_back({s, b});
        return -pooled_capacity_objective(s, b, X, pi);
    };
    SimplexOptions so{0.4, 1e-14, 4000, 2, 0xca9};
    double best = std::numeric_limits<double>::infinity();
    Vec arg;
    Vec bests;
    for (const Vec& x0 : {Vec{0.6, 0.0}, Vec{1.1, -1.0}, Vec{0.2, 1.0}}) {
        const SimplexMin m = minimize_simplex(obj, x0, so);
        bests.push_back(m.min);
        if (m.min < best) best = m.min, arg = m.argmin;
    }
    const auto [s, b] = sb(arg);
    const double scale = model == TheoryModel::vectorized ? cfg.L : 1.0;
    r.alpha_star = -best * scale;
    r.argmax = {s, b};
    double spread = 0.0;
    for (double v : bests) spread = std::max(spread, std::abs(v - best) / std::abs(best));
    r.converged = spread < 1e-6;
    return r;
}

// ----------------------------------------------------------- limit errors

std::string to_string(LimitModel m) {
    switch (m) {
        case LimitModel::pooled: return "pooled";
        case LimitModel::vectorized: return "vectorized";
        case LimitModel::attention: return "attention";
        case LimitModel::approx_attention: return "approx_attention";
    }
    return "?";
}

LimitModel parse_limit_model(std::string_view s) {
    if (s == "pooled") return LimitModel::pooled;
    if (s == "vectorized") return LimitModel::vectorized;
    if (s == "attention") return LimitModel::attention;
    if (s == "approx_attention") return LimitModel::approx_attention;
    throw ParameterError("unknown limit model: " + std::string(s));
}

std::string to_string(SnrRegime r) {
    switch (r) {
        case SnrRegime::snr_zero: return "snr_zero";
        case SnrRegime::snr_finite: return "snr_finite";
        case SnrRegime::snr_infinite: return "snr_infinite";
    }
    return "?";
}

LimitErrorResult limit_optimal_error(LimitModel model, double snr, double pi, std::optional<bool> attention_threshold) {
    if (!(snr >= 0.0)) throw ParameterError("limit_optimal_error: snr must be >= 0");
    if (!(pi >= 0.0 && pi <= 1.0)) throw ParameterError("limit_optimal_error: pi must lie in [0,1]");
    LimitErrorResult r;
    r.model = model;
    r.regime = snr == 0.0 ? SnrRegime::snr_zero : std::isinf(snr) ? SnrRegime::snr_infinite : SnrRegime::snr_finite;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double trivial = std::min(pi, 1.0 - pi);

    if (model == LimitModel::attention) {
        r.value = attention_threshold.value_or(false) ? 0.0 : nan;
        return r;
    }
    if (r.regime == SnrRegime::snr_zero) {
        r.value = trivial;
        return r;
    }
    if (r.regime == SnrRegime::snr_infinite) {
        r.value = 0.0;
        return r;
    }
    if (model == LimitModel::pooled) {
        if (pi == 0.0 || pi == 1.0) {
            r.value = 0.0;
            return r;
        }
        r.b_star = -snr / 2.0 - std::log(1.0 / pi - 1.0) / snr;
        r.value = (1.0 - pi) * normal_cdf(r.b_star) + pi * normal_cdf(-r.b_star - snr);
        return r;
    }
    r.value = nan;
    r.strictly_positive = model == LimitModel::vectorized;
    return r;
}

ScalarMin finite_pooled_optimum(const TaskConfig& cfg) {
    cfg.validate();
    const double X = cfg.snr(), pi = cfg.pi;
    auto f = [&](double b) { return (1.0 - pi) * normal_cdf(-b) + pi * normal_cdf(b - X); };
    // flat tails defeat golden section alone: scan first, then refine
    const double lo = -30.0 - X, hi = 30.0 + X, h = 0.05;
    double best = lo;
    for (double b = lo; b <= hi; b += h)
        if (f(b) < f(best)) best = b;
    return minimize_scalar(f, std::max(lo, best - h), std::min(hi, best + h), 1e-12);
}

// -------------------------------------------------------------------- export

nlohmann::json to_json(const TheorySolution& s) {
    nlohmann::json j = {{"model", to_string(s.model)},
                        {"alpha", s.alpha},
                        {"lambda", s.lambda},
                        {"mu1", s.mu1},
                        {"mu2", s.mu2},
                        {"b_hat", s.b_hat},
                        {"nu", s.nu},
                        {"chi", s.chi},
                        {"mu3", s.mu3},
                        {"e_test", s.e_test},
                        {"e_test_se", s.e_test_se},
                        {"e_train", s.e_train},
                        {"residual_nu", s.residual_nu},
                        {"residual_chi", s.residual_chi},
                        {"converged", s.converged},
                        {"evaluations", s.evaluations}};
    if (!s.m_token.empty()) j["m_token"] = s.m_token;
    return j;
}

nlohmann::json to_json(const CapacityResult& c) {
    return {{"model", to_string(c.model)}, {"alpha_star", c.alpha_star}, {"argmax", c.argmax}, {"converged", c.converged}};
}

nlohmann::json to_json(const RidgelessQuadratic& r) {
    return {{"model", to_string(r.model)}, {"e_test_inf", r.e_test_inf}, {"correction", r.correction},
            {"mu1_inf", r.mu1_inf},        {"mu2_inf", r.mu2_inf},       {"b_inf", r.b_inf},
            {"mu3_inf", r.mu3_inf},        {"nu2_coeff", r.nu2_coeff}};
}

nlohmann::json to_json(const LimitErrorResult& r) {
    nlohmann::json j = {{"model", to_string(r.model)},
                        {"regime", to_string(r.regime)},
                        {"strictly_positive", r.strictly_positive}};
    if (std::isnan(r.value)) j["value"] = nullptr;
    else j["value"] = r.value;
    if (r.model == LimitModel::pooled && r.regime == SnrRegime::snr_finite) j["b_star"] = r.b_star;
    return j;
}

std::string theory_csv_header() {
    return "model,alpha,lambda,mu1,mu2,b_hat,nu,chi,mu3,e_test,e_test_se,e_train,residual_nu,residual_chi,converged";
}

std::string to_csv_row(const TheorySolution& s) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << to_string(s.model) << ',' << s.alpha << ',' << s.lambda << ',' << s.mu1 << ',' << s.mu2 << ',' << s.b_hat
       << ',' << s.nu << ',' << s.chi << ',' << s.mu3 << ',' << s.e_test << ',' << s.e_test_se << ',' << s.e_train
       << ',' << s.residual_nu << ',' << s.residual_chi << ',' << (s.converged ? 1 : 0);
    return os.str();
}

}  // namespace tokenlab
