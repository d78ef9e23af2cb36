#include "tokenlab/theory_two_step.hpp"

#include <cmath>

#include "tokenlab/errors.hpp"

namespace tokenlab {

std::string to_string(TwoStepVariant v) { return v == TwoStepVariant::as_printed ? "as_printed" : "consistent"; }

TwoStepVariant parse_two_step_variant(std::string_view s) {
    if (s == "as_printed") return TwoStepVariant::as_printed;
    if (s == "consistent") return TwoStepVariant::consistent;
    throw ParameterError("unknown two-step variant: " + std::string(s));
}

namespace {

void check_alpha0(double a) {
    if (!(a > 0.0)) throw ParameterError("two-step theory: alpha0 must be > 0");
}

double gamma1_of(double C, const StepSchedule& s, const TaskConfig& c, double alpha0) {
    const double sig = c.pi * c.theta * c.R / c.L;
    // alpha0 = inf is allowed internally for the limiting law
    const double self = std::isinf(alpha0) ? 0.0 : 1.0 / (alpha0 * c.L);
    return std::abs(s.eta_w) * C * std::sqrt(self + sig * sig);
}

MixtureLaw law_at(const StepSchedule& s, const LossSpec& loss, const TaskConfig& c, double alpha0, TwoStepVariant v) {
    const double C = c_loss(loss);
    const double b = C * s.eta_b * (2.0 * c.pi - 1.0);
    const double inv_a = std::isinf(alpha0) ? 0.0 : 1.0 / alpha0;
    const double sig2 = c.theta * c.theta * c.R * c.R / (double(c.L) * c.L);
    MixtureLaw m;
    if (v == TwoStepVariant::as_printed) {
        m.mean_minus = b - C * s.eta_w * inv_a;
        m.mean_plus = b + C * s.eta_w * (inv_a + sig2);
        m.var_minus = m.var_plus = C * C * s.eta_w * s.eta_w * inv_a / (double(c.L) * c.L);
    } else {
        m.mean_minus = b - C * s.eta_w * inv_a / c.L;
        m.mean_plus = b + C * s.eta_w * (inv_a / c.L + c.pi * sig2);
        const double g1 = gamma1_of(C, s, c, alpha0);
        m.var_minus = m.var_plus = g1 * g1 / c.L;
    }
    return m;
}

struct Q2Parts {
    double norm, align;
};

Q2Parts q2_formulas(const StepSchedule& s, const TaskConfig& c, double alpha0, double g1, double g2,
                    const MixtureMoments& E, TwoStepVariant v) {
    const double L = c.L, th2 = c.theta * c.theta, A = c.R - double(c.R) * c.R / L;
    const double E2 = v == TwoStepVariant::consistent ? c.pi * E.E2 : E.E2;
    const double E4 = v == TwoStepVariant::consistent ? c.pi * E.E4 : E.E4;
    const double inv_a = 1.0 / alpha0;
    const double radicand = (L - 1) * g1 * g1 * ((L - 1) * E.E1 * E.E1 + E.E3 * inv_a) +
                            th2 * A * (g2 * g2 * E4 * inv_a + 2.0 * g2 * g2 * E2 * (L - 1) * E.E1) +
                            th2 * th2 * g2 * g2 * A * A * E2 * E2;
    const double pref = s.eta_q * s.beta / L;
    return {std::abs(pref) * std::sqrt(std::max(0.0, radicand)), -pref * g2 * ((L - 1) * E.E1 + th2 * A * E2)};
}

}  // namespace

MixtureLaw mixture_law(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg, double alpha0,
                       TwoStepVariant variant) {
    check_alpha0(alpha0);
    return law_at(sched, loss, cfg, alpha0, variant);
}

MixtureMoments mixture_moments(const MixtureLaw& law, const LossSpec& loss, double pi, int order) {
    if (law.var_minus < 0.0 || law.var_plus < 0.0) throw ParameterError("mixture_moments: negative variance");
    const auto& gh = gauss_hermite_cached(order);
    double m1m = 0, m2m = 0, m1p = 0, m2p = 0;
    const double sm = std::sqrt(law.var_minus), sp = std::sqrt(law.var_plus);
    for (std::size_t i = 0; i < gh.size(); ++i) {
        const double cm = loss_d1(loss, law.mean_minus + sm * gh.nodes[i], -1.0);
        const double cp = loss_d1(loss, law.mean_plus + sp * gh.nodes[i], 1.0);
        m1m += gh.weights[i] * cm, m2m += gh.weights[i] * cm * cm;
        m1p += gh.weights[i] * cp, m2p += gh.weights[i] * cp * cp;
    }
    return {pi * m1p + (1 - pi) * m1m, m1p, pi * m2p + (1 - pi) * m2m, m2p};
}

W1Prediction predict_w1(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg, double alpha0) {
    check_alpha0(alpha0);
    const double C = c_loss(loss);
    W1Prediction p;
    p.b1 = C * sched.eta_b * (2 * cfg.pi - 1);
    p.gamma1 = gamma1_of(C, sched, cfg, alpha0);
    p.gamma2 = sched.eta_w * C * cfg.theta * cfg.pi * cfg.R / cfg.L;
    p.s_w = p.gamma1 > 0.0 ? p.gamma2 / p.gamma1 : 0.0;
    return p;
}

Q2Prediction predict_q2(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg, double alpha0,
                        TwoStepVariant variant) {
    const auto w = predict_w1(sched, loss, cfg, alpha0);
    Q2Prediction p;
    p.moments = mixture_moments(law_at(sched, loss, cfg, alpha0, variant), loss, cfg.pi);
    const auto parts = q2_formulas(sched, cfg, alpha0, w.gamma1, w.gamma2, p.moments, variant);
    p.q2_norm = parts.norm;
    p.q2_align = parts.align;
    p.defined = p.q2_norm > 0.0;
    p.s_q = p.defined ? p.q2_align / p.q2_norm : 0.0;
    return p;
}

TwoStepPrediction predict_two_step(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg,
                                   double alpha0, TwoStepVariant variant) {
    const auto w = predict_w1(sched, loss, cfg, alpha0);
    const auto q = predict_q2(sched, loss, cfg, alpha0, variant);
    return {w.b1, w.gamma1, w.gamma2, w.s_w, q.q2_norm, q.q2_align, q.s_q, q.defined, q.moments};
}

LargeAlphaExpansion sq_large_alpha0(const StepSchedule& sched, const LossSpec& loss, const TaskConfig& cfg,
                                    TwoStepVariant variant) {
    const double C = c_loss(loss), pi = cfg.pi, L = cfg.L, th2 = cfg.theta * cfg.theta;
    const double A = cfg.R - double(cfg.R) * cfg.R / L;
    LargeAlphaExpansion out;
    const double sig = pi * cfg.theta * cfg.R;
    // printed coefficient carries L^2; expanding gamma2/gamma1 gives L
    out.s_w_coeff = (variant == TwoStepVariant::as_printed ? L * L : L) / (2.0 * sig * sig);
    const double ew2c2 = sched.eta_w * sched.eta_w * C * C;
    if (variant == TwoStepVariant::as_printed) {
        const double b = C * sched.eta_b * (2 * pi - 1);
        const double Gp = loss_d1(loss, b + sched.eta_w * pi * cfg.R * cfg.R * th2 / (2 * L * L), 1.0);
        const double Gm = loss_d1(loss, b, -1.0);
        const double mix = pi * Gp + (1 - pi) * Gm;
        const double num = ew2c2 * (L - 1) * (L - 1) / L * mix * mix + (L - 1) * (pi * Gp * Gp + (1 - pi) * Gm * Gm) +
                           th2 * A * Gp * Gp;
        const double den = (L - 1) * pi * Gp + (1 - pi) * Gm + th2 * A * Gp;
        out.coeff = num / (2 * den * den);
        out.sign_expression = -((L - 1) + th2 * A) * pi * Gp - (1 - pi) * Gm;
    } else {
        const auto E = mixture_moments(law_at(sched, loss, cfg, INFINITY, variant), loss, pi);
        const double g2 = sched.eta_w * C * cfg.theta * pi * cfg.R / L;
        const double B = (L - 1) * E.E1 + th2 * A * pi * E.E2;
        const double first = g2 != 0.0 ? (L - 1) * (L - 1) * E.E1 * E.E1 * ew2c2 / (L * g2 * g2) : INFINITY;
        out.coeff = (first + (L - 1) * E.E3 + th2 * A * pi * E.E4) / (2 * B * B);
        out.sign_expression = -B;
    }
    // the overall sign also carries sign(eta_q beta gamma2)
    const double g2sign = sched.eta_w * cfg.theta;
    const double pref = sched.eta_q * sched.beta * (g2sign > 0 ? 1.0 : g2sign < 0 ? -1.0 : 0.0);
    const double signed_expr = out.sign_expression * (pref > 0 ? 1.0 : pref < 0 ? -1.0 : 0.0);
    out.sign = signed_expr > 0 ? 1 : signed_expr < 0 ? -1 : 0;
    return out;
}

nlohmann::json to_json(const TwoStepPrediction& p, const StepSchedule& s, const LossSpec& loss, const TaskConfig& c,
                       double alpha0, TwoStepVariant variant) {
    return {{"params",
             {{"L", c.L},
              {"R", c.R},
              {"theta", c.theta},
              {"pi", c.pi},
              {"loss", to_string(loss.kind)},
              {"eta_b", s.eta_b},
              {"eta_w", s.eta_w},
              {"eta_q", s.eta_q},
              {"beta", s.beta},
              {"alpha0", alpha0},
              {"variant", to_string(variant)}}},
            {"b1", p.b1},
            {"gamma1", p.gamma1},
            {"gamma2", p.gamma2},
            {"s_w", p.s_w},
            {"q2_norm", p.q2_norm},
            {"q2_align", p.q2_align},
            {"s_q", p.s_q},
            {"s_q_defined", p.s_q_defined},
            {"E1", p.moments.E1},
            {"E2", p.moments.E2},
            {"E3", p.moments.E3},
            {"E4", p.moments.E4}};
}

}  // namespace tokenlab
