#pragma once

#include <string>
#include <string_view>

#include "json.hpp"
#include "tokenlab/data_model.hpp"
#include "tokenlab/losses.hpp"
#include "tokenlab/training.hpp"

namespace tokenlab {

// as_printed: the m_mu law and q2 formulas exactly as displayed, with E2, E4
// conditional on y = +1. consistent: the m_mu law re-derived from the first
// step (self term 1/(alpha0 L), signal term pi theta^2 R^2 / L^2, variance
// gamma1^2 / L) and the y = +1 sums weighted by pi. The second variant is
// the one finite-d simulations agree with.
enum class TwoStepVariant { as_printed, consistent };

std::string to_string(TwoStepVariant v);
TwoStepVariant parse_two_step_variant(std::string_view s);

struct MixtureLaw {
    double mean_minus = 0.0;
    double var_minus = 0.0;
    double mean_plus = 0.0;
    double var_plus = 0.0;
};

struct MixtureMoments {
    double E1 = 0.0;  // E[c]
    double E2 = 0.0;  // E[c | y = 1]
    double E3 = 0.0;  // E[c^2]
    double E4 = 0.0;  // E[c^2 | y = 1]
};

MixtureLaw mixture_law(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg, double alpha0,
                       TwoStepVariant variant = TwoStepVariant::as_printed);
// c = l'(m, y) with m | y Gaussian per the law
MixtureMoments mixture_moments(const MixtureLaw& law, const LossSpec& loss, double pi,
                               int order = kDefaultHermiteOrder);

struct W1Prediction {
    double b1;
    double gamma1;  // |w1|
    double gamma2;  // <w1, xi>
    double s_w;
};

W1Prediction predict_w1(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg, double alpha0);

struct Q2Prediction {
    double q2_norm;
    double q2_align;
    double s_q;
    bool defined;  // false when q2_norm = 0; s_q is then reported as 0
    MixtureMoments moments;
};

Q2Prediction predict_q2(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg, double alpha0,
                        TwoStepVariant variant = TwoStepVariant::as_printed);

struct TwoStepPrediction {
    double b1, gamma1, gamma2, s_w;
    double q2_norm, q2_align, s_q;
    bool s_q_defined;
    MixtureMoments moments;
};

TwoStepPrediction predict_two_step(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg,
                                   double alpha0, TwoStepVariant variant = TwoStepVariant::as_printed);

struct LargeAlphaExpansion {
    double coeff;  // |s_q| = 1 - coeff / alpha0 + o(1/alpha0)
    int sign;      // sign of s_q as alpha0 -> inf
    double sign_expression;
    double s_w_coeff;  // s_w = 1 - s_w_coeff / alpha0 + o(1/alpha0)
};

LargeAlphaExpansion sq_large_alpha0(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg,
                                    TwoStepVariant variant = TwoStepVariant::as_printed);

nlohmann::json to_json(const TwoStepPrediction& p, const StepSchedule& sched, const LossSpec& loss,
                       const TaskConfig& cfg, double alpha0, TwoStepVariant variant);

}  // namespace tokenlab
