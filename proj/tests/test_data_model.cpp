#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tokenlab/data_model.hpp"
#include "tokenlab/errors.hpp"
#include "tokenlab/rng.hpp"

using namespace tokenlab;

TEST(Philox, KnownAnswerZeroCounterZeroKey) {
    const auto out = Philox::block({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out[0], 0x6627e8d5u);
    EXPECT_EQ(out[1], 0xe169c58du);
    EXPECT_EQ(out[2], 0xbc57ac4cu);
    EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, SeekReproducesStreamAndStreamsDiffer) {
    Philox a(42, 7), b(42, 7), c(42, 8);
    for (int i = 0; i < 10; ++i) a();
    std::uint64_t x = a();
    b.seek(5);  // two outputs per block
    EXPECT_EQ(b(), x);
    Philox a2(42, 7);
    EXPECT_NE(a2(), c());
}

TEST(TaskConfig, Validation) {
    EXPECT_THROW(make_task(3, 4, 1.0, 0.5, 2), ParameterError);
    EXPECT_THROW(make_task(3, 1, -1.0, 0.5, 2), ParameterError);
    TaskConfig c = make_task(2, 1, 1.0, 0.5, 2);
    c.xi = {0.6, 0.8};
    EXPECT_NO_THROW(c.validate());
    c.xi = {0.6, 0.7};
    EXPECT_THROW(c.validate(), ParameterError);
    EXPECT_NEAR(make_task(16, 2, 3.0, 0.5, 4).snr(), 1.5, 1e-15);
}

TEST(SampleLocation, Examples) {
    Rng rng(1);
    const auto full = sample_location(make_task(3, 3, 1.0, 0.5, 1), rng);
    EXPECT_EQ(full, (std::vector<std::uint8_t>{1, 1, 1}));
    const auto fw = make_task(4, 2, 1.0, 0.5, 1, LocationLaw::fixed_window);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_location(fw, rng), (std::vector<std::uint8_t>{1, 1, 0, 0}));
    TaskConfig bad = make_task(3, 1, 1.0, 0.5, 1);
    bad.R = 4;
    EXPECT_THROW(sample_location(bad, rng), ParameterError);
}

TEST(SampleLocation, UniformMarginals) {
    Rng rng(2);
    const auto cfg = make_task(10, 3, 1.0, 0.5, 1);
    const int n = 100000;
    std::vector<int> cnt(10, 0);
    for (int i = 0; i < n; ++i) {
        const auto v = sample_location(cfg, rng);
        int s = 0;
        for (int l = 0; l < 10; ++l) cnt[l] += v[l], s += v[l];
        ASSERT_EQ(s, 3);
    }
    const double se = std::sqrt(0.3 * 0.7 / n);
    for (int l = 0; l < 10; ++l) EXPECT_NEAR(cnt[l] / double(n), 0.3, 3 * se) << l;
}

TEST(SampleBatch, ThetaZeroMakesClassesIndistinguishable) {
    Rng rng(3);
    const auto cfg = make_task(2, 1, 0.0, 0.5, 1);
    const auto batch = sample_batch(cfg, 100000, rng);
    double sp = 0, sn = 0;
    long np = 0, nn = 0;
    for (const auto& s : batch) {
        for (double x : s.X) (s.y == 1 ? sp : sn) += x;
        (s.y == 1 ? np : nn) += 2;
    }
    const double se = std::sqrt(1.0 / np + 1.0 / nn);
    EXPECT_LT(std::abs(sp / np - sn / nn), 3 * se);
}

TEST(SampleBatch, SignalMeanAlongXi) {
    Rng rng(4);
    TaskConfig cfg = make_task(1, 1, 5.0, 1.0, 2);
    cfg.xi = {1.0, 0.0};
    const int n = 100000;
    const auto batch = sample_batch(cfg, n, rng);
    double s = 0;
    for (const auto& x : batch) {
        ASSERT_EQ(x.y, 1);
        ASSERT_EQ(x.v.size(), 1u);
        s += x.X[0];
    }
    EXPECT_NEAR(s / n, 5.0, 3.0 / std::sqrt(double(n)));
}

TEST(SampleBatch, NegativesCarryNoLocation) {
    Rng rng(5);
    const auto batch = sample_batch(make_task(5, 2, 1.0, 0.5, 3), 1000, rng);
    for (const auto& s : batch) {
        if (s.y == -1) EXPECT_TRUE(s.v.empty());
        else {
            int c = 0;
            for (auto b : s.v) c += b;
            EXPECT_EQ(c, 2);
        }
    }
    EXPECT_THROW(sample_batch(make_task(5, 2, 1.0, 0.5, 3), 0, rng), ParameterError);
}

TEST(Features, AttentionDegeneratesToPooled) {
    Rng rng(6);
    const int L = 4, d = 3;
    Vec X(L * d);
    for (auto& x : X) x = rng.normal();
    const Vec pooled = features(FeatureKind::pooled, X, L, d, {});
    const Vec q0 = features(FeatureKind::attention, X, L, d, {Vec(d, 0.0), {}, 0.0, 3.0});
    const Vec b0 = features(FeatureKind::attention, X, L, d, {Vec{1.0, -2.0, 0.5}, {}, 0.0, 0.0});
    for (int j = 0; j < d; ++j) {
        EXPECT_NEAR(q0[j], pooled[j], 1e-15);
        EXPECT_NEAR(b0[j], pooled[j], 1e-15);
    }
}

TEST(Features, SoftmaxSaturationSelectsLargerScore) {
    const double a = 0.3, b = 1.1;
    const Vec X{a, b};
    const Vec f = features(FeatureKind::attention, X, 2, 1, {Vec{1.0}, {}, 0.0, 50.0});
    // brute force: weights e^{50a}, e^{50b}
    const double ea = std::exp(50 * a), eb = std::exp(50 * b);
    EXPECT_NEAR(f[0], (a * ea + b * eb) / (ea + eb), 1e-14);
    EXPECT_NEAR(f[0], std::max(a, b), 1e-15 + std::abs(a - b) * 2 * std::exp(-50 * std::abs(a - b)));
}

TEST(Features, ShiftInvarianceOfAttention) {
    // Xq shifted by a constant c: put the shift in a dedicated coordinate of X
    Rng rng(7);
    const int L = 5, d = 3;
    Vec X(L * d), Y(L * d);
    for (auto& x : X) x = rng.normal();
    Y = X;
    for (int l = 0; l < L; ++l) X[l * d + 2] = 0.0, Y[l * d + 2] = 0.0;
    const AttentionParams p{Vec{0.7, -0.4, 0.0}, {}, 0.0, 2.0};
    const AttentionParams p2{Vec{0.7, -0.4, 1.0}, {}, 0.0, 2.0};
    for (int l = 0; l < L; ++l) Y[l * d + 2] = 0.0;
    // with third column zero, q's third entry is irrelevant; now add 3.0 to every row's third column
    for (int l = 0; l < L; ++l) Y[l * d + 2] = 3.0;
    const Vec fx = features(FeatureKind::attention, X, L, d, p);
    const Vec fy = features(FeatureKind::attention, Y, L, d, p2);
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(fx[j], fy[j], 1e-14);
}

TEST(Features, VectorizedIsLosslessFlattening) {
    Rng rng(8);
    Vec X(6 * 4);
    for (auto& x : X) x = rng.normal();
    EXPECT_EQ(features(FeatureKind::vectorized, X, 6, 4, {}), X);
    EXPECT_THROW(features(FeatureKind::pooled, X, 5, 4, {}), ParameterError);
    EXPECT_THROW(features(FeatureKind::attention, X, 6, 4, {Vec(3, 0.0), {}, 0.0, 1.0}), ParameterError);
}

TEST(Features, ApproxAttentionAppliesPhiEntrywise) {
    const Vec X{1.0, 2.0, -1.0, 0.5};
    const Vec f = features(FeatureKind::approx_attention, X, 2, 2, {Vec{1.0, 0.0}, {}, 0.0, 1.0}, PhiKind::erf);
    const double p0 = 0.5 * (1 + std::erf(1.0)), p1 = 0.5 * (1 + std::erf(-1.0));
    EXPECT_NEAR(f[0], p0 * 1.0 + p1 * -1.0, 1e-15);
    EXPECT_NEAR(f[1], p0 * 2.0 + p1 * 0.5, 1e-15);
    EXPECT_NEAR(apply_phi(PhiKind::logistic, 0.0), 0.5, 0);
    EXPECT_NEAR(apply_phi(PhiKind::logistic, -800.0), 0.0, 1e-300);
}

TEST(Features, PooledNegativeProjectionVariance) {
    Rng rng(9);
    const auto cfg = make_task(8, 1, 2.0, 0.0, 3);
    const int n = 100000;
    double s2 = 0;
    for (int i = 0; i < n; ++i) {
        const auto s = sample_one(cfg, rng);
        const Vec f = features(FeatureKind::pooled, s.X, 8, 3, {});
        s2 += f[0] * f[0];
    }
    // var of the sample variance of N(0, 1/8): 2 sigma^4 / n
    EXPECT_NEAR(s2 / n, 1.0 / 8, 3 * std::sqrt(2.0 / n) / 8);
}

TEST(Classify, Examples) {
    EXPECT_EQ(classify(Vec{1.0, 2.0}, Vec{0.0, 0.0}, -1.0), -1);
    EXPECT_EQ(classify(Vec{1.0, 2.0}, Vec{0.0, 0.0}, 0.0), 1);
    EXPECT_EQ(classify(Vec{1.0, 0.0}, Vec{2.0, 0.0}, -1.0), 1);
    EXPECT_THROW(classify(Vec{1.0}, Vec{1.0, 2.0}, 0.0), ParameterError);
}

TEST(TestError, ConstantPredictorErrsOnPositives) {
    Rng rng(10);
    const auto cfg = make_task(3, 1, 1.0, 0.3, 2);
    Model m{FeatureKind::pooled, {Vec(2, 0.0), Vec(2, 0.0), -1.0, 1.0}};
    const auto e = empirical_test_error(m, cfg, 20000, rng);
    EXPECT_NEAR(e.rate, 0.3, 3 * e.std_err);
    EXPECT_THROW(empirical_test_error(m, cfg, 99, rng), ParameterError);
}

TEST(TestError, NoSignalNoBetterThanMajority) {
    Rng rng(11);
    const auto cfg = make_task(3, 1, 0.0, 0.4, 2);
    Model m{FeatureKind::attention, {Vec{1.0, 0.5}, Vec{0.3, -1.0}, 0.1, 2.0}};
    const auto e = empirical_test_error(m, cfg, 20000, rng);
    EXPECT_GE(e.rate, 0.4 - 3 * e.std_err);
}

TEST(TestError, PopulationFormulaMatchesSimulation) {
    const auto cfg = make_task(4, 2, 1.5, 0.4, 3);
    const std::vector<Model> models{
        {FeatureKind::pooled, {{}, Vec{0.9, 0.2, -0.1}, -0.3, 1.0}},
        {FeatureKind::vectorized, {{}, Vec{0.5, 0.1, 0, 0.4, 0, 0.2, 0.6, -0.3, 0, 0.3, 0.1, 0.1}, -0.2, 1.0}},
        {FeatureKind::attention, {Vec{0.8, 0.3, 0.0}, Vec{1.0, -0.2, 0.1}, -0.4, 2.0}},
        {FeatureKind::approx_attention, {Vec{0.8, 0.3, 0.0}, Vec{1.0, -0.2, 0.1}, -1.0, 1.0}, PhiKind::erf},
    };
    for (const auto& m : models) {
        Rng r1(12), r2(13);
        const auto emp = empirical_test_error(m, cfg, 200000, r1);
        const auto pop = population_test_error(m, cfg, 200000, r2);
        EXPECT_NEAR(emp.rate, pop.rate, 3 * std::hypot(emp.std_err, pop.std_err)) << to_string(m.kind);
    }
}

TEST(Serialization, RoundTrip) {
    Rng rng(14);
    const auto batch = sample_batch(make_task(3, 2, 1.0, 0.5, 2), 20, rng);
    std::stringstream ss;
    write_samples(ss, batch);
    const auto back = read_samples(ss);
    ASSERT_EQ(back.size(), batch.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].y, batch[i].y);
        EXPECT_EQ(back[i].X, batch[i].X);
    }
    std::stringstream bad("XXXX");
    EXPECT_THROW(read_samples(bad), ParameterError);
}

TEST(Names, RoundTrip) {
    for (auto k : {FeatureKind::attention, FeatureKind::pooled, FeatureKind::vectorized, FeatureKind::approx_attention})
        EXPECT_EQ(parse_feature_kind(to_string(k)), k);
    EXPECT_EQ(parse_location_law("fixed_window"), LocationLaw::fixed_window);
    EXPECT_THROW(parse_feature_kind("mlp"), ParameterError);
}
