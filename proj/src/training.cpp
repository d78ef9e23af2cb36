#include "tokenlab/training.hpp"

#include <algorithm>
#include <cmath>

#include "tokenlab/errors.hpp"
#include "tokenlab/kernels.hpp"

namespace tokenlab {

void StepSchedule::validate() const {
    if (!(alpha0 > 0.0) || !(alpha1 > 0.0)) throw ParameterError("StepSchedule: alpha0 and alpha1 must be > 0");
    if (!(lambda >= 0.0)) throw ParameterError("StepSchedule: lambda must be >= 0");
    if (!(beta >= 0.0)) throw ParameterError("StepSchedule: beta must be >= 0");
    for (double e : {eta_b, eta_w, eta_q})
        if (!std::isfinite(e)) throw ParameterError("StepSchedule: learning rates must be finite");
}

namespace {

void check_sample(const Sample& s, int L, int d) {
    if (s.L != L || s.d != d || s.X.size() != static_cast<std::size_t>(L) * d)
        throw ParameterError("training: samples must share one L x d shape");
}

// h_i(0,0,0) = l'(0; y_i)
void add_first(const Sample& s, const LossSpec& loss, Vec& wsum, double& bsum) {
    const double h = loss_d1(loss, 0.0, s.y);
    bsum += h;
    for (int l = 0; l < s.L; ++l) kernels::axpy(h, s.X.data() + static_cast<std::size_t>(l) * s.d, wsum.data(), s.d);
}

// accumulates h_i(0,w1,b1) X^T (I - 11^T/L) X w1
void add_second(const Sample& s, const Vec& w1, double b1, const LossSpec& loss, Vec& u, Vec& qsum) {
    kernels::gemv(s.X.data(), w1.data(), s.L, s.d, u.data());
    double mean = 0.0;
    for (int l = 0; l < s.L; ++l) mean += u[l];
    mean /= s.L;
    const double h = loss_d1(loss, mean + b1, s.y);
    for (int l = 0; l < s.L; ++l) u[l] = h * (u[l] - mean);
    Vec tmp(s.d);
    kernels::gemv_t(s.X.data(), u.data(), s.L, s.d, tmp.data());
    kernels::axpy(1.0, tmp.data(), qsum.data(), s.d);
}

FirstStep finish_first(Vec wsum, double bsum, long n0, int L, const StepSchedule& sched) {
    FirstStep out;
    const double sw = -sched.eta_w / (static_cast<double>(n0) * L);
    for (double& x : wsum) x *= sw;
    out.w1 = std::move(wsum);
    out.b1 = -sched.eta_b * bsum / static_cast<double>(n0);
    return out;
}

void finish_second(Vec& qsum, long n0, int L, const StepSchedule& sched) {
    const double s = -sched.eta_q * sched.beta / (static_cast<double>(n0) * L);
    for (double& x : qsum) x *= s;
}

long round_count(double alpha, int d) { return std::max<long>(1, std::lround(alpha * d)); }

}  // namespace

FirstStep stage12_first_step(const std::vector<Sample>& D0, const StepSchedule& sched, const LossSpec& loss) {
    if (D0.empty()) throw ParameterError("stage12_first_step: empty batch");
    const int L = D0[0].L, d = D0[0].d;
    Vec wsum(d, 0.0);
    double bsum = 0.0;
    for (const auto& s : D0) {
        check_sample(s, L, d);
        add_first(s, loss, wsum, bsum);
    }
    return finish_first(std::move(wsum), bsum, static_cast<long>(D0.size()), L, sched);
}

Vec stage3_second_step(const std::vector<Sample>& D0, const Vec& w1, double b1, const StepSchedule& sched,
                       const LossSpec& loss) {
    if (D0.empty()) throw ParameterError("stage3_second_step: empty batch");
    const int L = D0[0].L, d = D0[0].d;
    if (static_cast<int>(w1.size()) != d) throw ParameterError("stage3_second_step: w1 must have d entries");
    Vec qsum(d, 0.0), u(L);
    for (const auto& s : D0) {
        check_sample(s, L, d);
        add_second(s, w1, b1, loss, u, qsum);
    }
    finish_second(qsum, static_cast<long>(D0.size()), L, sched);
    return qsum;
}

DesignMatrix build_design(const std::vector<Sample>& D, FeatureKind kind, const AttentionParams& params, PhiKind phi) {
    if (D.empty()) throw ParameterError("build_design: empty batch");
    const int L = D[0].L, d = D[0].d;
    const auto p = static_cast<Eigen::Index>(feature_dim(kind, L, d));
    DesignMatrix F(static_cast<Eigen::Index>(D.size()), p + 1);
    for (std::size_t i = 0; i < D.size(); ++i) {
        check_sample(D[i], L, d);
        features_into(kind, D[i].X.data(), L, d, params, phi, F.row(static_cast<Eigen::Index>(i)).data());
        F(static_cast<Eigen::Index>(i), p) = 1.0;
    }
    return F;
}

namespace {

using EVec = Eigen::VectorXd;

struct Objective {
    const DesignMatrix& F;
    const std::vector<int>& y;
    double lambda;
    const LossSpec& loss;
    Eigen::Index p;  // number of regularized coordinates
    double n;

    double value(const EVec& x, EVec& z) const {
        z.noalias() = F * x;
        double s = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) s += loss_eval(loss, z[i], y[i]).value;
        return s / n + 0.5 * lambda * x.head(p).squaredNorm();
    }

    // fills d1, d2 at margins z and returns the gradient
    EVec gradient(const EVec& x, const EVec& z, EVec& d1, EVec& d2, double& mean_loss) const {
        double s = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const auto v = loss_eval(loss, z[i], y[i]);
            s += v.value;
            d1[i] = v.d1;
            d2[i] = v.d2;
        }
        mean_loss = s / n;
        EVec g = F.transpose() * d1 / n;
        g.head(p) += lambda * x.head(p);
        return g;
    }

    EVec hvp(const EVec& d2, const EVec& v) const {
        EVec u = F * v;
        u.array() *= d2.array();
        EVec out = F.transpose() * u / n;
        out.head(p) += lambda * v.head(p);
        return out;
    }
};

// Jacobi-preconditioned CG on H s = -g; stops on a relative residual or on
// non-positive curvature.
EVec newton_cg(const Objective& obj, const EVec& d2, const EVec& g, double rtol, int max_iter) {
    const Eigen::Index m = g.size();
    EVec diag = EVec::Zero(m);
    for (Eigen::Index i = 0; i < obj.F.rows(); ++i) diag += d2[i] * obj.F.row(i).transpose().cwiseAbs2();
    diag /= obj.n;
    diag.head(obj.p).array() += obj.lambda;
    for (Eigen::Index j = 0; j < m; ++j) diag[j] = diag[j] > 1e-300 ? 1.0 / diag[j] : 1.0;

    EVec s = EVec::Zero(m), r = -g;
    EVec zr = diag.cwiseProduct(r), dir = zr;
    double rz = r.dot(zr);
    const double stop = rtol * g.norm();
    for (int it = 0; it < max_iter && r.norm() > stop; ++it) {
        const EVec Hd = obj.hvp(d2, dir);
        const double curv = dir.dot(Hd);
        if (!(curv > 0.0)) break;
        const double a = rz / curv;
        s += a * dir;
        r -= a * Hd;
        zr = diag.cwiseProduct(r);
        const double rz_new = r.dot(zr);
        dir = zr + (rz_new / rz) * dir;
        rz = rz_new;
    }
    if (s.squaredNorm() == 0.0) return -g;
    return s;
}

// Dense Newton direction; nullopt-like empty vector when the system is singular.
EVec newton_dense(const Objective& obj, const EVec& d2, const EVec& g) {
    const Eigen::Index m = g.size();
    DesignMatrix S = obj.F;
    for (Eigen::Index i = 0; i < S.rows(); ++i) S.row(i) *= std::sqrt(d2[i]);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
    H.selfadjointView<Eigen::Lower>().rankUpdate(S.transpose(), 1.0 / obj.n);
    H.diagonal().head(obj.p).array() += obj.lambda;
    const double scale = std::max(H.diagonal().maxCoeff(), 1e-300);
    for (double ridge : {0.0, 1e-14, 1e-12, 1e-10, 1e-8}) {
        Eigen::MatrixXd Hr = H;
        Hr.diagonal().array() += ridge * scale;
        Eigen::LLT<Eigen::MatrixXd, Eigen::Lower> llt(Hr);
        if (llt.info() != Eigen::Success) continue;
        EVec s = llt.solve(-g);
        if (s.allFinite()) return s;
    }
    return {};
}

}  // namespace

ErmResult solve_erm(const DesignMatrix& F, const std::vector<int>& y, double lambda, const LossSpec& loss,
                    const ErmOptions& opt) {
    if (F.rows() == 0 || F.cols() < 1) throw ParameterError("solve_erm: empty design");
    if (static_cast<Eigen::Index>(y.size()) != F.rows()) throw ParameterError("solve_erm: label count mismatch");
    if (!(lambda >= 0.0)) throw ParameterError("solve_erm: lambda must be >= 0");
    const Eigen::Index m = F.cols();
    const Objective obj{F, y, lambda, loss, m - 1, static_cast<double>(F.rows())};
    const bool dense = m <= opt.dense_max_dim + 1;
    const bool watch_separation = lambda == 0.0 && loss.kind == LossKind::logistic;

    EVec x = EVec::Zero(m), z(F.rows()), d1(F.rows()), d2(F.rows()), zt(F.rows());
    double J = obj.value(x, z);
    ErmDiagnostics diag;
    EVec g = obj.gradient(x, z, d1, d2, diag.mean_loss);
    diag.trace.push_back(J);
    for (int it = 0;; ++it) {
        diag.iterations = it;
        diag.grad_norm = g.cwiseAbs().maxCoeff();
        if (diag.grad_norm <= opt.grad_tol) {
            diag.converged = true;
            break;
        }
        if (watch_separation) {
            bool all_pos = true;
            for (Eigen::Index i = 0; i < z.size() && all_pos; ++i) all_pos = y[i] * z[i] > 0.0;
            if (all_pos && opt.stop_when_separated) {
                diag.separable = true;
                break;
            }
            if (x.norm() > opt.norm_cap) {
                diag.separable = diag.hit_cap = true;
                break;
            }
        }
        if (it >= opt.max_iter) break;

        EVec s;
        if (dense) s = newton_dense(obj, d2, g);
        else {
            const double gn = g.norm();
            const double rtol = loss.kind == LossKind::quadratic ? 1e-3 * opt.grad_tol / std::max(gn, 1e-300)
                                                                  : std::min(0.5, std::sqrt(gn));
            s = newton_cg(obj, d2, g, std::max(rtol, 1e-14), 2000);
        }
        bool newton = s.size() == m;
        if (!newton || !(s.dot(g) < 0.0)) s = -g, newton = false;

        const double slope = s.dot(g);
        double t = 1.0, Jt = 0.0;
        bool accepted = false;
        for (int k = 0; k < 60; ++k, t *= 0.5) {
            Jt = obj.value(x + t * s, zt);
            if (Jt <= J + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted && newton) {
            // round-off floor on J: accept the full step if it shrinks the gradient
            t = 1.0;
            Jt = obj.value(x + s, zt);
            EVec d1t(F.rows()), d2t(F.rows());
            double ml;
            EVec gt = obj.gradient(x + s, zt, d1t, d2t, ml);
            if (gt.cwiseAbs().maxCoeff() < diag.grad_norm && Jt <= J + 1e-12 * std::max(1.0, std::abs(J))) {
                x += s;
                z = zt, d1 = d1t, d2 = d2t, g = gt, J = Jt, diag.mean_loss = ml;
                diag.trace.push_back(J);
                continue;
            }
        }
        if (!accepted) break;
        x += t * s;
        z = zt;
        J = Jt;
        g = obj.gradient(x, z, d1, d2, diag.mean_loss);
        diag.trace.push_back(J);
    }

    diag.objective = J;
    long wrong = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) wrong += (z[i] >= 0.0 ? 1 : -1) != y[i];
    diag.train_error = static_cast<double>(wrong) / static_cast<double>(z.size());
    if (watch_separation && !diag.separable && wrong == 0) {
        bool all_pos = true;
        for (Eigen::Index i = 0; i < z.size() && all_pos; ++i) all_pos = y[i] * z[i] > 0.0;
        diag.separable = all_pos;
    }

    ErmResult out;
    out.w.assign(x.data(), x.data() + m - 1);
    out.b = x[m - 1];
    out.diag = diag;
    return out;
}

Model TrainedModel::model() const {
    Model m;
    m.kind = kind;
    m.params = {q, w, b, beta};
    m.phi = phi;
    return m;
}

namespace {

std::vector<int> labels_of(const std::vector<Sample>& D) {
    std::vector<int> y(D.size());
    for (std::size_t i = 0; i < D.size(); ++i) y[i] = D[i].y;
    return y;
}

TrainedModel pack(FeatureKind kind, const Vec& q, double beta, ErmResult&& r) {
    TrainedModel t;
    t.kind = kind;
    t.q = q;
    t.beta = beta;
    t.w = std::move(r.w);
    t.b = r.b;
    t.diag = r.diag;
    return t;
}

}  // namespace

TrainedModel stage4_erm(const std::vector<Sample>& D1, FeatureKind kind, const Vec& q2, double beta, double lambda,
                        const LossSpec& loss, const ErmOptions& opt) {
    if (D1.empty()) throw ParameterError("stage4_erm: empty batch");
    const bool uses_q = kind == FeatureKind::attention || kind == FeatureKind::approx_attention;
    if (uses_q && static_cast<int>(q2.size()) != D1[0].d) throw ParameterError("stage4_erm: q2 must have d entries");
    const AttentionParams params{uses_q ? q2 : Vec{}, {}, 0.0, beta};
    const DesignMatrix F = build_design(D1, kind, params);
    return pack(kind, uses_q ? q2 : Vec{}, beta, solve_erm(F, labels_of(D1), lambda, loss, opt));
}

TwoStepResult run_two_steps(const TaskConfig& cfg, const StepSchedule& sched, const LossSpec& loss, Rng& rng,
                            const SampleOptions& sopt) {
    cfg.validate();
    sched.validate();
    const long n0 = round_count(sched.alpha0, cfg.d);
    // Two streaming passes over the same D0: the second replays a copy of the generator.
    Rng replay = rng;
    Vec wsum(cfg.d, 0.0);
    double bsum = 0.0;
    for (long i = 0; i < n0; ++i) add_first(sample_one(cfg, rng, sopt), loss, wsum, bsum);

    TwoStepResult out;
    out.first = finish_first(std::move(wsum), bsum, n0, cfg.L, sched);
    Vec qsum(cfg.d, 0.0), u(cfg.L);
    if (sched.eta_q * sched.beta != 0.0)
        for (long i = 0; i < n0; ++i) add_second(sample_one(cfg, replay, sopt), out.first.w1, out.first.b1, loss, u, qsum);
    finish_second(qsum, n0, cfg.L, sched);
    out.q2 = std::move(qsum);

    const Vec xi = cfg.signal();
    auto& st = out.stats;
    st.b1 = out.first.b1;
    st.w1_norm = std::sqrt(kernels::dot(out.first.w1.data(), out.first.w1.data(), cfg.d));
    st.w1_align = kernels::dot(out.first.w1.data(), xi.data(), cfg.d);
    st.q2_norm = std::sqrt(kernels::dot(out.q2.data(), out.q2.data(), cfg.d));
    st.q2_align = kernels::dot(out.q2.data(), xi.data(), cfg.d);
    st.s_w = st.w1_norm > 0.0 ? st.w1_align / st.w1_norm : 0.0;
    st.s_q = st.q2_norm > 0.0 ? st.q2_align / st.q2_norm : 0.0;
    return out;
}

ProtocolResult run_protocol(const TaskConfig& cfg, const StepSchedule& sched, const LossSpec& loss, Rng& rng,
                            FeatureKind kind, const ErmOptions& opt) {
    cfg.validate();
    sched.validate();
    // D0 and D1 get their own streams so that every featurizer sees the same D1.
    Rng r0(rng.engine()(), 0), r1(rng.engine()(), 1);
    ProtocolResult out;
    const bool uses_q = kind == FeatureKind::attention || kind == FeatureKind::approx_attention;
    if (uses_q) out.steps = run_two_steps(cfg, sched, loss, r0);

    const long n1 = round_count(sched.alpha1, cfg.d);
    const auto p = static_cast<Eigen::Index>(feature_dim(kind, cfg.L, cfg.d));
    DesignMatrix F(n1, p + 1);
    std::vector<int> y(n1);
    const AttentionParams params{uses_q ? out.steps.q2 : Vec{}, {}, 0.0, sched.beta};
    for (long i = 0; i < n1; ++i) {
        const Sample s = sample_one(cfg, r1);
        features_into(kind, s.X.data(), cfg.L, cfg.d, params, PhiKind::logistic, F.row(i).data());
        F(i, p) = 1.0;
        y[i] = s.y;
    }
    out.model = pack(kind, params.q, sched.beta, solve_erm(F, y, sched.lambda, loss, opt));
    return out;
}

nlohmann::json to_json(const TrainedModel& m) {
    return {{"kind", to_string(m.kind)},
            {"q", m.q},
            {"w", m.w},
            {"b", m.b},
            {"beta", m.beta},
            {"phi", m.phi == PhiKind::erf ? "erf" : "logistic"},
            {"diagnostics",
             {{"objective", m.diag.objective},
              {"mean_loss", m.diag.mean_loss},
              {"train_error", m.diag.train_error},
              {"iterations", m.diag.iterations},
              {"grad_norm", m.diag.grad_norm},
              {"converged", m.diag.converged},
              {"separable", m.diag.separable},
              {"hit_cap", m.diag.hit_cap}}}};
}

TrainedModel trained_model_from_json(const nlohmann::json& j) {
    TrainedModel m;
    m.kind = parse_feature_kind(j.at("kind").get<std::string>());
    m.q = j.at("q").get<Vec>();
    m.w = j.at("w").get<Vec>();
    m.b = j.at("b").get<double>();
    m.beta = j.at("beta").get<double>();
    m.phi = j.value("phi", std::string("logistic")) == "erf" ? PhiKind::erf : PhiKind::logistic;
    if (j.contains("diagnostics")) {
        const auto& d = j["diagnostics"];
        m.diag.objective = d.value("objective", 0.0);
        m.diag.mean_loss = d.value("mean_loss", 0.0);
        m.diag.train_error = d.value("train_error", 0.0);
        m.diag.iterations = d.value("iterations", 0);
        m.diag.grad_norm = d.value("grad_norm", 0.0);
        m.diag.converged = d.value("converged", false);
        m.diag.separable = d.value("separable", false);
        m.diag.hit_cap = d.value("hit_cap", false);
    }
    return m;
}

nlohmann::json to_json(const TwoStepStats& s) {
    return {{"b1", s.b1},           {"w1_norm", s.w1_norm}, {"w1_align", s.w1_align}, {"q2_norm", s.q2_norm},
            {"q2_align", s.q2_align}, {"s_w", s.s_w},         {"s_q", s.s_q}};
}

}  // namespace tokenlab
