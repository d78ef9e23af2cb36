#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tokenlab/data_model.hpp"
#include "tokenlab/losses.hpp"
#include "tokenlab/numerics.hpp"
#include "tokenlab/rng.hpp"

namespace tokenlab {

enum class TheoryModel { attention, pooled, vectorized };

std::string to_string(TheoryModel m);
TheoryModel parse_theory_model(std::string_view s);

inline constexpr std::size_t kDefaultScalarLawSamples = 200000;

// Monte-Carlo sample of (y, c_q, c_xi, c_z). The primitives <g,s>, <theta v,s>
// and |s| are kept since the test error needs them without z0.
// gamma is the cosine between q and xi; the softmax temperature is beta * q_norm.
struct ScalarLaw {
    Vec y;
    Vec gs;   // <g, s>
    Vec vs;   // <theta v, s>, 0 when y = -1
    Vec sn;   // |s|
    Vec z0;
    Vec c_q, c_xi, c_z;

    double gamma = 0.0;
    double q_norm = 1.0;
    double beta = 0.0;
    TaskConfig cfg;
    bool degenerate = false;     // |gamma| = 1: the plane is the line of q, c_xi folded into c_q
    bool high_variance = false;  // fewer than 1e3 samples
    std::size_t n_pos = 0;

    std::size_t size() const { return y.size(); }
};

ScalarLaw sample_scalar_law(double gamma, double q_norm, double beta, const TaskConfig& cfg, std::size_t n_mc,
                            Rng& rng);

// Law of the feature projections used by the fixed-point equations. Each atom
// carries a label, a weight, c_z and the in-plane coefficients c (p of them).
// A shared Gaussian part with covariance noise_cov may be added on top of c;
// it is integrated by Gauss-Hermite instead of being sampled.
struct FeatureLaw {
    int p = 1;
    Vec y, weight, c_z;
    Vec c;          // p per atom, atom-major
    Vec noise_cov;  // p x p
    Vec gram;       // p x p Gram matrix of the in-plane directions
    double alpha_scale = 1.0;  // effective ratio = alpha * alpha_scale
    double pi = 0.5;

    std::size_t atoms() const { return y.size(); }
};

FeatureLaw attention_feature_law(const ScalarLaw& law);
FeatureLaw pooled_feature_law(const TaskConfig& cfg);
FeatureLaw vectorized_feature_law(const TaskConfig& cfg);

struct InnerOptions {
    double tol = 1e-12;
    int max_iter = 100;
    int hermite_order = kDefaultHermiteOrder;
};

struct InnerSolution {
    double nu = 0.0;
    double chi = 0.0;
    double phi = 0.0;  // E[l(z* + eps, y)] + lambda nu^2 / 2
    double residual_nu = 0.0;
    double residual_chi = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Relative residuals of the two self-consistent equations at (nu, chi):
// |1 - E[z*(z* - c_z nu Z)/c_z^2] / (lambda chi nu^2)| and
// |1 - alpha chi (E[l'' c_z^2 / (1 + l'' c_z^2 chi)] + lambda)|.
struct FixedPointResiduals {
    double nu;
    double chi;
    double phi;
};

FixedPointResiduals fixed_point_residuals(const FeatureLaw& law, const Vec& mu, double b, double nu, double chi,
                                          double alpha, double lambda, const LossSpec& loss,
                                          int hermite_order = kDefaultHermiteOrder);

InnerSolution inner_fixed_point(const FeatureLaw& law, const Vec& mu, double b, double alpha, double lambda,
                                const LossSpec& loss, const InnerOptions& opt = {},
                                const InnerSolution* warm = nullptr);
InnerSolution inner_fixed_point(double mu_q, double mu_xi, double b, const ScalarLaw& law, double alpha1,
                                double lambda, const LossSpec& loss, const InnerOptions& opt = {});

// Quadratic loss: chi solves 1/alpha = E[c_z^2 chi / (1 + c_z^2 chi)] + lambda chi.
// lambda = 0 needs the effective ratio above 1.
double quadratic_chi(const FeatureLaw& law, double alpha, double lambda);

struct TheoryOptions {
    InnerOptions inner;
    SimplexOptions simplex{0.5, 1e-6, 2000, 1, 0x5eed};  // coarse stage, Newton polishes after
    bool closed_quadratic = true;  // linear-system path for the quadratic loss
    Vec start;                     // outer starting point (mu..., b); empty for the default
};

struct TheorySolution {
    TheoryModel model = TheoryModel::attention;
    double alpha = 0.0;
    double lambda = 0.0;
    double mu1 = 0.0, mu2 = 0.0, b_hat = 0.0;
    double nu = 0.0, chi = 0.0, mu3 = 0.0;
    double e_test = 0.0, e_test_se = 0.0;
    double e_train = 0.0;  // minimized outer objective
    double residual_nu = 0.0, residual_chi = 0.0;
    bool converged = false;
    int evaluations = 0;
    Vec m_token;  // vectorized: theta <w_k, xi> per token
};

// mu3 = [nu^2 + (mu1^2 + mu2^2 - 2 gamma mu1 mu2)/(1 - gamma^2) - mu1^2]^(1/2);
// a radicand down to -1e-10 is clipped to 0.
double derived_mu3(double nu, double mu1, double mu2, double gamma, bool degenerate);

ErrorEstimate test_error_formula(double mu1, double mu2, double mu3, double b, const ScalarLaw& law);
ErrorEstimate test_error_formula(double mu1, double mu2, double mu3, double b, double gamma, double q_norm,
                                 double beta, const TaskConfig& cfg, std::size_t n_mc, Rng& rng);

TheorySolution outer_minimize(const ScalarLaw& law, double alpha1, double lambda, const LossSpec& loss,
                              const TheoryOptions& opt = {});
TheorySolution pooled_theory(const TaskConfig& cfg, double alpha1, double lambda, const LossSpec& loss,
                             const TheoryOptions& opt = {});
TheorySolution vectorized_theory(const TaskConfig& cfg, double alpha, double lambda, const LossSpec& loss,
                                 const TheoryOptions& opt = {});

// lambda -> 0+ by Richardson extrapolation over lambda in {1e-4, 1e-5, 1e-6}
// (quadratic loss with effective ratio above 1 is solved at lambda = 0 directly).
// When |w| keeps growing like log(1/lambda) (separable data) the ladder is
// continued to 1e-10 and the last solution is returned instead.
TheorySolution ridgeless_theory(TheoryModel model, const TaskConfig& cfg, const ScalarLaw* law, double alpha,
                                const LossSpec& loss, const TheoryOptions& opt = {});

struct RidgelessQuadratic {
    TheoryModel model = TheoryModel::pooled;
    double e_test_inf = 0.0;
    double correction = 0.0;  // E_test = e_test_inf + correction / alpha + o(1/alpha)
    double mu1_inf = 0.0, mu2_inf = 0.0, b_inf = 0.0, mu3_inf = 0.0;
    double nu2_coeff = 0.0;   // nu^2 = nu2_coeff / alpha + o(1/alpha)
};

RidgelessQuadratic ridgeless_quadratic(TheoryModel model, const TaskConfig& cfg, const ScalarLaw* law = nullptr);

struct CapacityResult {
    TheoryModel model = TheoryModel::pooled;
    double alpha_star = 0.0;
    Vec argmax;  // (s, b) for pooled/vectorized, (m_q, m_xi, b) for attention
    bool converged = false;
    std::vector<Vec> trajectory;  // points visited by the optimizer (pooled/vectorized)
};

// (1 - s^2) / (pi gtm2(b + X s) + (1 - pi) gtm2(-b))
double pooled_capacity_objective(double s, double b, double snr, double pi);
// 1 / E[gtm2(y (b + c_q m_q + c_xi m_xi) / c_z)]
double attention_capacity_objective(const ScalarLaw& law, double m_q, double m_xi, double b);

CapacityResult capacity(TheoryModel model, const TaskConfig& cfg, const ScalarLaw* law = nullptr,
                        bool keep_trajectory = false);

enum class LimitModel { pooled, vectorized, attention, approx_attention };
enum class SnrRegime { snr_zero, snr_finite, snr_infinite };

std::string to_string(LimitModel m);
LimitModel parse_limit_model(std::string_view s);
std::string to_string(SnrRegime r);

struct LimitErrorResult {
    LimitModel model = LimitModel::pooled;
    SnrRegime regime = SnrRegime::snr_zero;
    double value = 0.0;             // NaN when the limit is not determined
    bool strictly_positive = false;  // only a positive lower bound is known
    double b_star = 0.0;            // pooled, finite SNR
};

// snr may be +inf. attention_threshold: whether liminf theta / sqrt(2 log L) > 1 holds.
LimitErrorResult limit_optimal_error(LimitModel model, double snr, double pi,
                                     std::optional<bool> attention_threshold = std::nullopt);

// min over b of (1 - pi) Phi(-b) + pi Phi(b - theta R / sqrt(L)).
ScalarMin finite_pooled_optimum(const TaskConfig& cfg);

nlohmann::json to_json(const TheorySolution& s);
nlohmann::json to_json(const CapacityResult& c);
nlohmann::json to_json(const RidgelessQuadratic& r);
nlohmann::json to_json(const LimitErrorResult& r);
std::string theory_csv_header();
std::string to_csv_row(const TheorySolution& s);

}  // namespace tokenlab
