// Acceptance checks. One line per criterion: "criterion k: PASS|FAIL <summary>".
// Usage: acceptance [--criterion k] [--out DIR]

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tokenlab/data_model.hpp"
#include "tokenlab/experiments.hpp"
#include "tokenlab/losses.hpp"
#include "tokenlab/numerics.hpp"
#include "tokenlab/theory_errors.hpp"

using namespace tokenlab;
using nlohmann::json;

namespace {

std::string g_out = "acceptance_out";

struct Check {
    std::string what;
    bool ok;
    std::string detail;
};

struct Verdict {
    std::vector<Check> checks;

    void add(std::string what, bool ok, std::string detail = "") {
        std::printf("    %-4s %s %s\n", ok ? "ok" : "FAIL", what.c_str(), detail.c_str());
        std::fflush(stdout);
        checks.push_back({std::move(what), ok, std::move(detail)});
    }
    bool ok() const {
        for (const auto& c : checks)
            if (!c.ok) return false;
        return !checks.empty();
    }
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
    char buf[200];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

ExperimentReport run_and_write(json cfg, const std::string& dir) {
    cfg["output_dir"] = (std::filesystem::path(g_out) / dir).string();
    const auto spec = parse_config(cfg);
    auto rep = run_experiment(spec);
    write_report(rep);
    for (const auto& pt : rep.points)
        for (const auto& f : pt.failures) std::printf("    failure: %s\n", f.c_str());
    return rep;
}

void print_rows(const Panel& p) {
    for (const auto& r : p.rows) {
        const double x = r.tuple.count(p.swept) ? r.tuple.at(p.swept) : std::nan("");
        std::printf("      %-22s %s=%-6g theory=%-12.6g mean=%-12.6g se=%-10.3g z=%+6.2f %s\n", p.name.c_str(),
                    p.swept.c_str(), x, r.theory, r.empirical_mean, r.empirical_stderr, r.z, r.pass ? "" : "*");
    }
}

// ---------------------------------------------------------------- criteria

Verdict criterion1() {
    Verdict v;
    const json cfg = {{"name", "two_step_cosine"},
                      {"params", {{"L", 10}, {"R", 3}, {"pi", 0.2}, {"theta", 6}, {"eta", 0.5}, {"d", 1000}}},
                      {"grid", {{"alpha0", {1, 2, 4, 8, 16}}}},
                      {"loss", "logistic"},
                      {"variant", "consistent"},
                      {"trials", 10},
                      {"seed", 1}};
    const auto rep = run_and_write(cfg, "criterion1");
    std::size_t pass = 0, n = 0;
    for (const auto& p : rep.panels) {
        print_rows(p);
        for (const auto& r : p.rows) pass += r.pass, ++n;
    }
    const double frac = n ? static_cast<double>(pass) / n : 0.0;
    v.add("s_w and s_q within 3 standard errors on >= 90% of points", frac >= 0.9,
          fmt("(%.0f%% of %g rows)", 100 * frac, static_cast<double>(n)));
    return v;
}

Verdict criterion2() {
    Verdict v;
    const json cfg = {{"name", "error_curves"},
                      {"params",
                       {{"L", 10}, {"R", 1}, {"pi", 0.5}, {"theta", 5}, {"lambda", 1e-5}, {"eta", 0.1}, {"beta", 20},
                        {"d", 1000}}},
                      {"grid", {{"alpha1", {0.5, 1, 2, 4, 8}}}},
                      {"models", {"attention", "pooled", "vectorized"}},
                      {"loss", "quadratic"},
                      {"variant", "consistent"},
                      {"trials", 8},
                      {"seed", 2}};
    const auto rep = run_and_write(cfg, "criterion2");
    for (const std::string model : {"attention", "pooled", "vectorized"}) {
        std::size_t pass = 0, n = 0;
        for (const auto& p : rep.panels)
            if (p.name.ends_with(model)) {
                print_rows(p);
                for (const auto& r : p.rows) pass += r.pass, ++n;
            }
        const double frac = n ? static_cast<double>(pass) / n : 0.0;
        v.add(model + ": test error and train loss within 3 standard errors on >= 90% of points", frac >= 0.9,
              fmt("(%.0f%% of %g rows)", 100 * frac, static_cast<double>(n)));
    }
    return v;
}

Verdict criterion3() {
    Verdict v;
    const json cfg = {{"name", "capacity_scan"},
                      {"params",
                       {{"L", 2}, {"R", 1}, {"pi", 0.3}, {"theta", 2}, {"gamma", 0.99}, {"q_norm", 1}, {"beta", 1},
                        {"d", 2000}, {"rel_tol", 0.1}}},
                      {"models", {"vectorized", "attention", "pooled"}},
                      {"trials", 20},
                      {"seed", 3}};
    const auto rep = run_and_write(cfg, "criterion3");
    for (const auto& r : rep.panels.at(0).rows) {
        const double rel = r.empirical_mean / r.theory - 1.0;
        v.add(r.model + ": empirical transition within 10% of predicted capacity", r.pass,
              fmt("(predicted %.4f, empirical %.4f +- %.4f,", r.theory, r.empirical_mean, r.empirical_stderr) +
                  fmt(" rel %+.3f)", rel));
    }
    const bool order = rep.extra.value("ordering_vectorized_attention_pooled", false);
    v.add("predicted ordering vectorized > attention > pooled", order);
    return v;
}

double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

Verdict criterion4() {
    Verdict v;
    const LossSpec quad{LossKind::quadratic, true}, logi{LossKind::logistic, true};

    double worst = 0.0;
    for (double y : {-1.0, 1.0})
        for (double x = -6; x <= 6; x += 0.37)
            for (double g : {1e-3, 0.2, 1.0, 7.5}) {
                const double closed = (x + g * y) / (1.0 + g);
                worst = std::max(worst, std::abs(prox(quad, y, x, g) - closed));
            }
    v.add("quadratic prox equals (x + gamma y)/(1 + gamma)", worst <= 1e-14, fmt("(max diff %.1e)", worst));

    {
        Rng rng(44);
        bool same = true;
        const int L = 10, d = 1000;
        for (int t = 0; t < 20 && same; ++t) {
            Vec X(L * d), q(d);
            for (auto& x : X) x = rng.normal();
            for (auto& x : q) x = rng.normal();
            const Vec a = features(FeatureKind::attention, X, L, d, {q, {}, 0.0, 0.0});
            const Vec p = features(FeatureKind::pooled, X, L, d, {});
            same = a == p;
        }
        v.add("attention features at beta = 0 equal pooled features bit for bit", same);
    }

    {
        double worst_rel = 0.0;
        for (int L : {2, 5, 10})
            for (double theta : {0.0, 1.0, 3.0})
                for (double pi : {0.3, 0.5}) {
                    const auto cfg = make_task(L, 1, theta, pi, 100);
                    const double ap = capacity(TheoryModel::pooled, cfg).alpha_star;
                    const double av = capacity(TheoryModel::vectorized, cfg).alpha_star;
                    worst_rel = std::max(worst_rel, std::abs(ap / (av / L) - 1.0));
                }
        v.add("capacity(pooled) = capacity(vectorized) / L", worst_rel <= 1e-6, fmt("(max rel diff %.1e)", worst_rel));
    }

    {
        double worst_q = 0.0;
        for (double a = -8; a <= 8; a += 0.25) {
            auto f = [a](double u) { return std::exp(-0.5 * (a + u) * (a + u)) / std::sqrt(2.0 * M_PI) * u * u; };
            const double quad_v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                f, 0.0, std::numeric_limits<double>::infinity(), 20, 1e-15);
            worst_q = std::max(worst_q, std::abs(gaussian_tail_moment2(a) - quad_v));
        }
        v.add("gaussian_tail_moment2 matches adaptive quadrature", worst_q <= 1e-9, fmt("(max diff %.1e)", worst_q));
    }

    {
        double worst_s = 0.0;
        for (const LossSpec& s : {logi, quad})
            for (double y : {-1.0, 1.0})
                for (double x = -30; x <= 30; x += 0.7)
                    for (double g : {1e-4, 0.1, 1.0, 10.0, 1e3}) {
                        const double z = prox(s, y, x, g);
                        const double r = std::abs(z - x + g * loss_d1(s, z, y)) / std::max(1.0, std::abs(x));
                        worst_s = std::max(worst_s, r);
                    }
        v.add("prox stationarity residual", worst_s <= 1e-10, fmt("(max %.1e)", worst_s));
    }

    {
        double worst_d = 0.0;
        const double h = 1e-5;
        for (const LossSpec& s : {logi, quad})
            for (double y : {-1.0, 1.0})
                for (double z = -8; z <= 8; z += 0.31) {
                    const auto l = loss_eval(s, z, y);
                    const double fd1 = (loss_eval(s, z + h, y).value - loss_eval(s, z - h, y).value) / (2 * h);
                    const double fd2 = (loss_eval(s, z + h, y).d1 - loss_eval(s, z - h, y).d1) / (2 * h);
                    const double fd3 = (loss_eval(s, z + h, y).d2 - loss_eval(s, z - h, y).d2) / (2 * h);
                    worst_d = std::max({worst_d, std::abs(l.d1 - fd1) / std::max(1.0, std::abs(fd1)),
                                        std::abs(l.d2 - fd2) / std::max(1.0, std::abs(fd2)),
                                        std::abs(loss_d3(s, z, y) - fd3) / std::max(1.0, std::abs(fd3))});
                }
        v.add("loss derivatives match finite differences", worst_d <= 1e-6, fmt("(max rel %.1e)", worst_d));
    }

    {
        double worst_c = 0.0;
        const double lambda = 1e-9;
        Rng rng(45);
        const auto cfg = make_task(4, 1, 2.0, 0.5, 100);
        const auto law = sample_scalar_law(0.6, 1.0, 2.0, cfg, 20000, rng);
        for (const FeatureLaw& f : {pooled_feature_law(cfg), attention_feature_law(law)})
            for (double a : {0.1, 0.3, 0.5, 0.7, 0.9})
                worst_c = std::max(worst_c, std::abs(lambda * quadratic_chi(f, a, lambda) - (1.0 / a - 1.0)));
        v.add("lambda chi -> 1/alpha - 1 below interpolation (quadratic, lambda = 1e-9)", worst_c <= 1e-4,
              fmt("(max diff %.1e)", worst_c));
    }
    return v;
}

Verdict criterion5() {
    Verdict v;
    {
        const auto cfg = make_task(4, 1, 4.0, 0.5, 100);  // X = theta R / sqrt(L) = 2
        const double e = ridgeless_quadratic(TheoryModel::pooled, cfg).e_test_inf;
        v.add("pooled ridgeless quadratic residual at pi = 0.5, X = 2 equals Phi(-1)",
              std::abs(e - 0.158655) <= 1e-6 && std::abs(e - Phi(-1.0)) <= 1e-12,
              fmt("(%.10f vs %.10f)", e, Phi(-1.0)));
    }
    {
        bool exact = true;
        for (double pi : {0.0, 0.1, 0.3, 0.5, 0.7, 0.95, 1.0})
            exact = exact && limit_optimal_error(LimitModel::pooled, 0.0, pi).value == std::min(pi, 1.0 - pi);
        v.add("pooled limit at SNR = 0 equals min(pi, 1 - pi) exactly", exact);
    }
    {
        double worst = 0.0;
        for (double theta : {0.5, 5.0, 12.0, 30.0})
            for (double pi : {0.2, 0.5, 0.8}) {
                const auto cfg = make_task(100, 3, theta, pi, 1);
                const double fin = finite_pooled_optimum(cfg).min;
                const double lim = limit_optimal_error(LimitModel::pooled, cfg.snr(), pi).value;
                worst = std::max(worst, std::abs(fin - lim));
            }
        v.add("finite-L pooled optimum matches the limit formula at L = 100", worst <= 1e-3, fmt("(max diff %.1e)", worst));
    }
    {
        // solved theory at large alpha, correction c(alpha) = alpha (E(alpha) - E_inf), Richardson in 1/alpha
        const LossSpec quad{LossKind::quadratic, true};
        bool ok = true;
        for (int L : {2, 4}) {
            const auto cfg = make_task(L, 1, 2.0 * std::sqrt(static_cast<double>(L)), 0.5, 100);
            const double e_inf = ridgeless_quadratic(TheoryModel::pooled, cfg).e_test_inf;
            const double e_inf_v = ridgeless_quadratic(TheoryModel::vectorized, cfg).e_test_inf;
            std::vector<double> ratio;
            for (double a : {1e2, 1e3, 1e4}) {
                const double cp = a * (ridgeless_theory(TheoryModel::pooled, cfg, nullptr, a, quad).e_test - e_inf);
                const double cv = a * (ridgeless_theory(TheoryModel::vectorized, cfg, nullptr, a, quad).e_test - e_inf_v);
                ratio.push_back(cv / cp);
            }
            const double r = (10.0 * ratio[2] - ratio[1]) / 9.0;
            const bool pass = std::abs(r / L - 1.0) <= 0.05;
            ok = ok && pass;
            std::printf("      L=%d ratios %.8f %.8f %.8f -> extrapolated %.8f\n", L, ratio[0], ratio[1], ratio[2], r);
        }
        v.add("vectorized / pooled 1/alpha correction ratio -> L within 5%", ok);
    }
    return v;
}

Verdict criterion6() {
    Verdict v;
    const LossSpec quad{LossKind::quadratic, true}, logi{LossKind::logistic, true};
    struct Case {
        std::string name;
        TheorySolution s;
        FeatureLaw f;
        Vec mu;
        LossSpec loss;
    };
    std::vector<Case> cases;
    auto add_linear = [&](TheoryModel m, const TaskConfig& cfg, double a, double lam, const LossSpec& loss) {
        const auto s = m == TheoryModel::pooled ? pooled_theory(cfg, a, lam, loss) : vectorized_theory(cfg, a, lam, loss);
        const auto f = m == TheoryModel::pooled ? pooled_feature_law(cfg) : vectorized_feature_law(cfg);
        cases.push_back({to_string(m) + " " + to_string(loss.kind) + fmt(" alpha=%g lambda=%g", a, lam), s, f, {s.mu2},
                         loss});
    };
    for (int L : {2, 5})
        for (double a : {0.5, 2.0, 8.0})
            for (double lam : {1e-4, 1e-2, 1.0}) {
                const auto cfg = make_task(L, 1, 2.0, 0.3, 100);
                add_linear(TheoryModel::pooled, cfg, a, lam, quad);
                add_linear(TheoryModel::pooled, cfg, a, lam, logi);
                add_linear(TheoryModel::vectorized, cfg, a, lam, quad);
                add_linear(TheoryModel::vectorized, cfg, a, lam, logi);
            }
    {
        Rng rng(46);
        const auto cfg = make_task(3, 1, 2.0, 0.4, 100);
        const auto law = sample_scalar_law(0.8, 1.0, 2.0, cfg, 20000, rng);
        const auto small = sample_scalar_law(0.8, 1.0, 2.0, cfg, 400, rng);
        const auto f = attention_feature_law(law), fs = attention_feature_law(small);
        for (double a : {0.5, 2.0, 8.0})
            for (double lam : {1e-3, 0.1}) {
                const auto s = outer_minimize(law, a, lam, quad);
                cases.push_back({fmt("attention quadratic alpha=%g lambda=%g", a, lam), s, f, {s.mu1, s.mu2}, quad});
            }
        TheoryOptions opt;
        opt.inner.hermite_order = 24;
        for (double a : {1.0, 4.0}) {
            const auto s = outer_minimize(small, a, 1e-2, logi, opt);
            cases.push_back({fmt("attention logistic alpha=%g lambda=%g", a, 1e-2), s, fs, {s.mu1, s.mu2}, logi});
        }
    }

    int converged = 0;
    double worst = 0.0, worst_re = 0.0;
    std::string worst_name;
    for (const auto& c : cases) {
        if (!c.s.converged) {
            std::printf("      not converged: %s\n", c.name.c_str());
            continue;
        }
        ++converged;
        const int order = c.name.find("attention logistic") == 0 ? 24 : kDefaultHermiteOrder;
        const auto r = fixed_point_residuals(c.f, c.mu, c.s.b_hat, c.s.nu, c.s.chi, c.s.alpha, c.s.lambda, c.loss, order);
        const double m = std::max(c.s.residual_nu, c.s.residual_chi);
        const double re = std::max(r.nu, r.chi);
        if (std::max(m, re) > std::max(worst, worst_re)) worst_name = c.name;
        worst = std::max(worst, m);
        worst_re = std::max(worst_re, re);
    }
    v.add("every converged solution satisfies both equations (reported residuals)", worst <= 1e-7 && converged > 0,
          fmt("(%g of %g converged, max %.1e)", converged, static_cast<double>(cases.size()), worst));
    v.add("every converged solution satisfies both equations (recomputed residuals)", worst_re <= 1e-7,
          fmt("(max %.1e)", worst_re) + (worst_name.empty() ? "" : " worst: " + worst_name));

    double worst_chi = 0.0;
    for (const auto& c : cases)
        if (c.loss.kind == LossKind::quadratic && c.s.converged)
            worst_chi = std::max(worst_chi, std::abs(c.s.chi / quadratic_chi(c.f, c.s.alpha, c.s.lambda) - 1.0));
    {
        // generic engine on the quadratic loss against the scalar chi equation
        TheoryOptions generic;
        generic.closed_quadratic = false;
        for (double a : {0.5, 3.0})
            for (double lam : {1e-3, 0.1}) {
                const auto cfg = make_task(4, 1, 2.0, 0.4, 100);
                const auto s = pooled_theory(cfg, a, lam, quad, generic);
                worst_chi = std::max(worst_chi, std::abs(s.chi / quadratic_chi(pooled_feature_law(cfg), a, lam) - 1.0));
            }
    }
    v.add("quadratic chi matches the scalar chi equation", worst_chi <= 1e-8, fmt("(max rel %.1e)", worst_chi));
    return v;
}

const char* kTitles[] = {
    "",
    "two-step cosine similarities",
    "error curves for attention, pooled and vectorized",
    "separability thresholds and their ordering",
    "exact identities",
    "closed-form limits",
    "fixed-point validity",
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int only = 0;
    app.add_option("--criterion", only, "run one criterion (1-6); default all")->check(CLI::Range(1, 6));
    app.add_option("--out", g_out, "directory for experiment outputs");
    CLI11_PARSE(app, argc, argv);

    std::vector<std::function<Verdict()>> crit = {nullptr,     criterion1, criterion2, criterion3,
                                                  criterion4, criterion5, criterion6};
    bool all = true;
    std::vector<std::string> lines;
    for (int k = 1; k <= 6; ++k) {
        if (only && k != only) continue;
        std::printf("criterion %d: %s\n", k, kTitles[k]);
        std::fflush(stdout);
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = crit[k]().ok();
        } catch (const std::exception& e) {
            std::printf("    error: %s\n", e.what());
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char buf[256];
        std::snprintf(buf, sizeof buf, "criterion %d: %s %s (%.1f s)", k, ok ? "PASS" : "FAIL", kTitles[k], sec);
        lines.push_back(buf);
        all = all && ok;
    }
    std::printf("\n");
    for (const auto& l : lines) std::printf("%s\n", l.c_str());
    return all ? 0 : 1;
}
