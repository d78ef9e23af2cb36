#include <gtest/gtest.h>

#include <cmath>

#include "tokenlab/kernels.hpp"
#include "tokenlab/theory_two_step.hpp"

using namespace tokenlab;

namespace {

const LossSpec kLogistic{LossKind::logistic, true};
const LossSpec kQuadratic{LossKind::quadratic, true};

StepSchedule eta(double b, double w, double q, double beta = 1.0) {
    StepSchedule s;
    s.eta_b = b, s.eta_w = w, s.eta_q = q, s.beta = beta;
    return s;
}

struct MeanSe {
    double mean, se;
};

MeanSe mean_se(const std::vector<double>& v) {
    double s = 0, s2 = 0;
    for (double x : v) s += x, s2 += x * x;
    const double n = static_cast<double>(v.size()), m = s / n;
    return {m, std::sqrt(std::max(0.0, (s2 / n - m * m) / (n - 1)))};
}

}  // namespace

TEST(MixtureLaw, PrintedExamples) {
    const auto cfg = make_task(2, 1, 2.0, 0.5, 10);
    const auto z = mixture_law(eta(0, 0, 1), kLogistic, cfg, 2.0);
    EXPECT_EQ(z.mean_minus, 0.0);
    EXPECT_EQ(z.mean_plus, 0.0);
    EXPECT_EQ(z.var_minus, 0.0);
    EXPECT_EQ(z.var_plus, 0.0);
    const auto b = mixture_law(eta(1, 0, 1), kLogistic, cfg, 2.0);
    EXPECT_EQ(b.mean_minus, 0.0);
    EXPECT_EQ(b.mean_plus, 0.0);
    const auto q = mixture_law(eta(0, 1, 1), kQuadratic, cfg, 2.0);
    EXPECT_NEAR(q.mean_plus, 1.5, 1e-15);
    EXPECT_NEAR(q.var_plus, 0.125, 1e-15);
    EXPECT_NEAR(q.mean_minus, -0.5, 1e-15);
}

TEST(MixtureLaw, ConsistentLawMatchesMonteCarloOfMargins) {
    // m_mu = <w1, X_mu^T 1 / L> + b1 over the very samples that built w1
    const int d = 2000;
    auto cfg = make_task(2, 1, 2.0, 0.4, d);
    const StepSchedule sc = eta(0.3, 1.0, 1.0);
    const double alpha0 = 2.0;
    std::vector<double> mp, mm;
    for (int seed = 0; seed < 3; ++seed) {
        Rng rng(500 + seed), replay = rng;
        const auto D = sample_batch(cfg, static_cast<int>(alpha0 * d), rng);
        const auto f = stage12_first_step(D, sc, kQuadratic);
        for (const auto& s : D) {
            const Vec pooled = features(FeatureKind::pooled, s.X, cfg.L, d, {});
            const double m = kernels::dot(pooled.data(), f.w1.data(), d) + f.b1;
            (s.y == 1 ? mp : mm).push_back(m);
        }
    }
    const auto law = mixture_law(sc, kQuadratic, cfg, alpha0, TwoStepVariant::consistent);
    const auto p = mean_se(mp), n = mean_se(mm);
    EXPECT_NEAR(p.mean, law.mean_plus, 4 * p.se);
    EXPECT_NEAR(n.mean, law.mean_minus, 4 * n.se);
    auto var = [](const std::vector<double>& v, double m) {
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return s / (v.size() - 1);
    };
    EXPECT_NEAR(var(mp, p.mean), law.var_plus, 0.05 * law.var_plus);
    EXPECT_NEAR(var(mm, n.mean), law.var_minus, 0.05 * law.var_minus);
}

TEST(MixtureMoments, Examples) {
    const MixtureLaw zero{};
    const auto h = mixture_moments(zero, kQuadratic, 0.5);
    EXPECT_NEAR(h.E1, 0.0, 1e-15);
    EXPECT_NEAR(h.E2, -1.0, 1e-15);
    EXPECT_NEAR(h.E3, 1.0, 1e-15);
    EXPECT_NEAR(h.E4, 1.0, 1e-15);
    EXPECT_NEAR(mixture_moments(zero, kQuadratic, 0.2).E1, 1 - 2 * 0.2, 1e-15);
    for (double pi : {0.1, 0.5, 0.9}) EXPECT_NEAR(mixture_moments(zero, kLogistic, pi).E2, -0.5, 1e-15);
}

TEST(MixtureMoments, QuadraticMatchesGaussianClosedForms) {
    Rng rng(61);
    for (int rep = 0; rep < 200; ++rep) {
        const MixtureLaw law{rng.normal(), 2 * rng.uniform(), rng.normal(), 2 * rng.uniform()};
        const double pi = rng.uniform();
        const auto E = mixture_moments(law, kQuadratic, pi);
        // c = m - y
        const double c1p = law.mean_plus - 1, c1m = law.mean_minus + 1;
        const double c2p = law.var_plus + c1p * c1p, c2m = law.var_minus + c1m * c1m;
        EXPECT_NEAR(E.E2, c1p, 1e-10);
        EXPECT_NEAR(E.E4, c2p, 1e-10);
        EXPECT_NEAR(E.E1, pi * c1p + (1 - pi) * c1m, 1e-10);
        EXPECT_NEAR(E.E3, pi * c2p + (1 - pi) * c2m, 1e-10);
    }
}

TEST(PredictW1, Examples) {
    const auto cfg = make_task(2, 1, 2.0, 0.5, 10);
    const auto w = predict_w1(eta(0, 1, 1), kQuadratic, cfg, 2.0);
    EXPECT_NEAR(w.gamma2, 0.5, 1e-15);
    EXPECT_NEAR(w.gamma1, std::sqrt(0.5), 1e-15);
    EXPECT_NEAR(w.s_w, std::sqrt(0.5), 1e-15);
    const auto zero = predict_w1(eta(0, 1, 1), kQuadratic, make_task(2, 1, 0.0, 0.5, 10), 2.0);
    EXPECT_EQ(zero.gamma2, 0.0);
    EXPECT_EQ(zero.s_w, 0.0);
    const auto big = make_task(10, 3, 6.0, 0.2, 10);
    const auto ex = sq_large_alpha0(eta(0.5, 0.5, 0.5), kLogistic, big, TwoStepVariant::consistent);
    EXPECT_NEAR(sq_large_alpha0(eta(0.5, 0.5, 0.5), kLogistic, big).s_w_coeff, 10 * ex.s_w_coeff, 1e-12);
    for (double a : {1e2, 1e4, 1e6}) {
        const double sw = predict_w1(eta(0.5, 0.5, 0.5), kLogistic, big, a).s_w;
        EXPECT_NEAR(a * (1 - sw), ex.s_w_coeff, 2 * ex.s_w_coeff * ex.s_w_coeff / a);
    }
}

TEST(PredictQ2, NoSignalNoAlignmentAndHomogeneity) {
    for (auto v : {TwoStepVariant::as_printed, TwoStepVariant::consistent}) {
        EXPECT_EQ(predict_q2(eta(0.5, 0.5, 0.5), kLogistic, make_task(10, 3, 0.0, 0.2, 10), 4.0, v).q2_align, 0.0);
        const auto cfg = make_task(10, 3, 6.0, 0.2, 10);
        const auto a = predict_q2(eta(0.5, 0.5, 0.5, 2.0), kLogistic, cfg, 4.0, v);
        const auto b = predict_q2(eta(0.5, 0.5, 1.0, 2.0), kLogistic, cfg, 4.0, v);
        const auto c = predict_q2(eta(0.5, 0.5, 3.7, 2.0), kLogistic, cfg, 4.0, v);
        EXPECT_NEAR(b.q2_norm, 2 * a.q2_norm, 1e-14);
        EXPECT_NEAR(b.q2_align, 2 * a.q2_align, 1e-14);
        EXPECT_NEAR(a.s_q, b.s_q, 1e-14);
        EXPECT_NEAR(a.s_q, c.s_q, 1e-14);
    }
    const auto undefined = predict_q2(eta(0.5, 0.0, 0.5), kLogistic, make_task(10, 3, 6.0, 0.2, 10), 4.0);
    EXPECT_FALSE(undefined.defined);
    EXPECT_EQ(undefined.s_q, 0.0);
}

TEST(PredictQ2, CosinesBoundedOnRandomSweep) {
    Rng rng(62);
    for (int rep = 0; rep < 1000; ++rep) {
        const int L = 1 + static_cast<int>(rng.below(12));
        const int R = 1 + static_cast<int>(rng.below(L));
        const auto cfg = make_task(L, R, 8 * rng.uniform(), 0.02 + 0.96 * rng.uniform(), 10);
        const auto sc = eta(4 * rng.normal(), 2 * rng.normal(), rng.normal(), 3 * rng.uniform());
        const auto loss = rep % 2 ? kLogistic : kQuadratic;
        const double a0 = std::exp(6 * rng.uniform() - 3);
        for (auto v : {TwoStepVariant::as_printed, TwoStepVariant::consistent}) {
            const auto p = predict_two_step(sc, loss, cfg, a0, v);
            ASSERT_LE(std::abs(p.s_q), 1.0 + 1e-12);
            ASSERT_LE(std::abs(p.s_w), 1.0 + 1e-12);
            ASSERT_GE(p.gamma1 + 1e-15, std::abs(p.gamma2));
            ASSERT_GE(p.q2_norm * (1 + 1e-12) + 1e-300, std::abs(p.q2_align));
        }
    }
}

TEST(PredictQ2, ConsistentVariantMatchesSimulationGrid) {
    const int d = 1000, trials = 10;
    const StepSchedule sc = eta(0.5, 0.5, 0.5);
    int pass = 0, total = 0;
    for (double alpha0 : {1.0, 2.0, 4.0}) {
        for (double theta : {2.0, 4.0, 6.0}) {
            auto cfg = make_task(3, 1, theta, 0.3, d);
            StepSchedule s = sc;
            s.alpha0 = alpha0;
            std::vector<double> sw, sq;
            for (int t = 0; t < trials; ++t) {
                Rng rng(hash_combine({7, hash_double(alpha0), hash_double(theta), static_cast<std::uint64_t>(t)}));
                const auto r = run_two_steps(cfg, s, kLogistic, rng);
                sw.push_back(r.stats.s_w), sq.push_back(r.stats.s_q);
            }
            const auto p = predict_two_step(s, kLogistic, cfg, alpha0, TwoStepVariant::consistent);
            const auto w = mean_se(sw), q = mean_se(sq);
            const bool ok_w = std::abs(w.mean - p.s_w) <= 3 * w.se, ok_q = std::abs(q.mean - p.s_q) <= 3 * q.se;
            pass += ok_w + ok_q, total += 2;
            EXPECT_TRUE(ok_w) << alpha0 << " " << theta << " s_w sim " << w.mean << "+-" << w.se << " pred " << p.s_w;
            EXPECT_TRUE(ok_q) << alpha0 << " " << theta << " s_q sim " << q.mean << "+-" << q.se << " pred " << p.s_q;
        }
    }
    EXPECT_EQ(pass, total);
}

TEST(LargeAlpha, SignExamples) {
    const auto cfg = make_task(10, 3, 6.0, 0.2, 10);
    for (auto v : {TwoStepVariant::as_printed, TwoStepVariant::consistent})
        EXPECT_EQ(sq_large_alpha0(eta(20.0, 0.5, 0.5), kLogistic, cfg, v).sign, 1);
    // quadratic, pi = 1/2, eta_b = 0: direct evaluation of the printed expression,
    // G+ = l'(eta_w pi R^2 theta^2 / (2 L^2), 1), G- = l'(0, -1) = 1
    const auto q = make_task(4, 2, 1.5, 0.5, 10);
    const double eta_w = 0.8;
    const double Gp = eta_w * 0.5 * 4 * 2.25 / (2 * 16) - 1.0, Gm = 1.0;
    const double expr = -((4 - 1) + 2.25 * 2 * (1 - 0.5)) * 0.5 * Gp - 0.5 * Gm;
    const auto ex = sq_large_alpha0(eta(0.0, eta_w, 1.0), kQuadratic, q);
    EXPECT_NEAR(ex.sign_expression, expr, 1e-15);
    EXPECT_EQ(ex.sign, expr > 0 ? 1 : -1);
}

TEST(LargeAlpha, ConsistentCoefficientMatchesRichardson) {
    const auto cfg = make_task(10, 3, 6.0, 0.2, 10);
    for (const auto& loss : {kLogistic, kQuadratic}) {
        const StepSchedule sc = eta(0.5, 0.5, 0.5);
        const auto ex = sq_large_alpha0(sc, loss, cfg, TwoStepVariant::consistent);
        auto f = [&](double a) {
            return a * (1 - std::abs(predict_q2(sc, loss, cfg, a, TwoStepVariant::consistent).s_q));
        };
        const double rich = (10 * f(1e4) - f(1e3)) / 9;
        EXPECT_NEAR(rich, ex.coeff, 0.05 * ex.coeff);
        EXPECT_NEAR(f(1e2), ex.coeff, 0.05 * ex.coeff);
        const auto p = predict_q2(sc, loss, cfg, 1e4, TwoStepVariant::consistent);
        EXPECT_EQ(p.s_q > 0 ? 1 : -1, ex.sign);
    }
}

TEST(TwoStepJson, KeyedByParameters) {
    const auto cfg = make_task(10, 3, 6.0, 0.2, 10);
    const auto sc = eta(0.5, 0.5, 0.5);
    const auto p = predict_two_step(sc, kLogistic, cfg, 4.0, TwoStepVariant::consistent);
    const auto j = to_json(p, sc, kLogistic, cfg, 4.0, TwoStepVariant::consistent);
    EXPECT_EQ(j["params"]["variant"], "consistent");
    EXPECT_EQ(j["params"]["L"], 10);
    EXPECT_DOUBLE_EQ(j["s_q"].get<double>(), p.s_q);
    EXPECT_EQ(parse_two_step_variant("as_printed"), TwoStepVariant::as_printed);
}
