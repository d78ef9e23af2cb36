#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "tokenlab/kernels.hpp"

using namespace tokenlab;

namespace {

std::vector<double> randvec(std::mt19937_64& g, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(g);
    return v;
}

class KernelEquivalence : public ::testing::Test {
protected:
    void SetUp() override {
        if (!kernels::avx2_table()) GTEST_SKIP() << "built without AVX2 table";
        if (!__builtin_cpu_supports("avx2")) GTEST_SKIP() << "CPU lacks AVX2";
    }
    const kernels::Table& ref = kernels::scalar_table();
    const kernels::Table& simd() { return *kernels::avx2_table(); }
};

}  // namespace

TEST_F(KernelEquivalence, DotMatchesScalarOnAllTailLengths) {
    std::mt19937_64 g(1);
    for (std::size_t n : {0, 1, 3, 4, 5, 15, 16, 17, 33, 1000, 10007}) {
        auto a = randvec(g, n), b = randvec(g, n);
        double mag = 0.0;
        for (std::size_t i = 0; i < n; ++i) mag += std::abs(a[i] * b[i]);
        EXPECT_NEAR(ref.dot(a.data(), b.data(), n), simd().dot(a.data(), b.data(), n), 1e-14 * (1.0 + mag)) << n;
    }
}

TEST_F(KernelEquivalence, AxpyMatchesScalar) {
    std::mt19937_64 g(2);
    for (std::size_t n : {1, 7, 8, 9, 31, 1001}) {
        auto x = randvec(g, n), y1 = randvec(g, n);
        auto y2 = y1;
        ref.axpy(0.37, x.data(), y1.data(), n);
        simd().axpy(0.37, x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-15 * (1.0 + std::abs(y1[i])));
    }
}

TEST_F(KernelEquivalence, GemvBothWaysMatchScalar) {
    std::mt19937_64 g(3);
    for (std::size_t L : {1, 2, 10}) {
        for (std::size_t d : {1, 5, 16, 17, 1000}) {
            auto X = randvec(g, L * d), a = randvec(g, L), w = randvec(g, d);
            std::vector<double> o1(d), o2(d), r1(L), r2(L);
            ref.gemv_t(X.data(), a.data(), L, d, o1.data());
            simd().gemv_t(X.data(), a.data(), L, d, o2.data());
            for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(o1[j], o2[j], 1e-13);
            ref.gemv(X.data(), w.data(), L, d, r1.data());
            simd().gemv(X.data(), w.data(), L, d, r2.data());
            for (std::size_t l = 0; l < L; ++l) EXPECT_NEAR(r1[l], r2[l], 1e-12 * std::sqrt(double(d)));
        }
    }
}

TEST_F(KernelEquivalence, SoftmaxMatchesScalarIncludingHugeScores) {
    std::mt19937_64 g(4);
    for (int rep = 0; rep < 200; ++rep) {
        auto x = randvec(g, 10, rep % 2 ? 1e3 : 1.0);
        auto y = x;
        ref.softmax(x.data(), x.size(), 0.7);
        simd().softmax(y.data(), y.size(), 0.7);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-15);
    }
}

TEST(KernelDispatch, ForceSelectsTableAndAutoRestores) {
    kernels::force("scalar");
    EXPECT_STREQ(kernels::active().name, "scalar");
    kernels::force("auto");
    if (kernels::avx2_table() && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        EXPECT_STREQ(kernels::active().name, "avx2");
    EXPECT_THROW(kernels::force("sse9"), std::invalid_argument);
}

TEST(KernelDispatch, SoftmaxIsAProbabilityVector) {
    std::mt19937_64 g(5);
    for (int rep = 0; rep < 10000; ++rep) {
        auto x = randvec(g, 1 + rep % 12, rep % 3 == 0 ? 1e3 : 3.0);
        kernels::softmax(x.data(), x.size(), 1.0);
        double s = 0.0;
        for (double v : x) {
            ASSERT_GE(v, 0.0);
            s += v;
        }
        ASSERT_NEAR(s, 1.0, 1e-12);
    }
}
