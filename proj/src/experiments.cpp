#include "tokenlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <optional>
#include <thread>

#include "tokenlab/data_model.hpp"
#include "tokenlab/losses.hpp"
#include "tokenlab/rng.hpp"
#include "tokenlab/theory_errors.hpp"
#include "tokenlab/theory_two_step.hpp"
#include "tokenlab/training.hpp"

#ifndef TOKENLAB_VERSION
#define TOKENLAB_VERSION "0.0.0"
#endif

namespace tokenlab {

std::string artifact_version() { return TOKENLAB_VERSION; }

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kTheoryTag = 0x7468656f7279ULL;
constexpr std::uint64_t kProbeTag = 0x70726f6265ULL;

struct ParamDef {
    const char* name;
    double def;
    bool integral;
};

// NaN defaults are resolved per point: eta_* -> eta, alpha0 <-> alpha1.
const std::vector<ParamDef>& param_defs() {
    static const std::vector<ParamDef> defs = {
        {"L", 10, true},           {"R", 1, true},          {"theta", 1.0, false},    {"pi", 0.5, false},
        {"d", 1000, true},         {"eta", 0.5, false},     {"eta_w", kNaN, false},   {"eta_q", kNaN, false},
        {"eta_b", kNaN, false},    {"beta", 1.0, false},    {"lambda", 0.0, false},   {"alpha0", kNaN, false},
        {"alpha1", kNaN, false},   {"gamma", 0.99, false},  {"q_norm", 1.0, false},   {"n_mc", 200000, true},
        {"n_test", 100000, true},  {"snr", 1.0, false},     {"tol", 1e-3, false},     {"rel_tol", 0.1, false},
        {"bracket", 1.25, false},  {"bisect_steps", 3, true}, {"hermite_order", kDefaultHermiteOrder, true},
    };
    return defs;
}

const ParamDef* find_def(const std::string& name) {
    for (const auto& p : param_defs())
        if (name == p.name) return &p;
    return nullptr;
}

std::string join(const std::vector<std::string>& v, const char* sep = ", ") {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
    return out;
}

double number_at(const nlohmann::json& v, const std::string& path, bool integral) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double x = v.get<double>();
    if (integral && (!v.is_number_integer() && std::floor(x) != x)) throw ConfigError(path, "expected an integer");
    return x;
}

std::string string_at(const nlohmann::json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
}

void check_keys(const nlohmann::json& obj, const std::string& path, const std::set<std::string>& allowed) {
    std::vector<std::string> unknown;
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) unknown.push_back(it.key());
    if (!unknown.empty()) throw ConfigError(path.empty() ? "<root>" : path, "unknown keys: " + join(unknown));
}

std::vector<std::string> default_models(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::error_curves:
        case ExperimentKind::capacity_scan: return {"attention", "pooled", "vectorized"};
        case ExperimentKind::residual_vs_gamma: return {"attention"};
        default: return {};
    }
}

std::uint64_t tuple_hash(const std::map<std::string, double>& t) {
    std::uint64_t h = 0x7475706c65ULL;
    for (const auto& [k, v] : t) {
        std::uint64_t kh = 0;
        for (char c : k) kh = kh * 131 + static_cast<unsigned char>(c);
        h = hash_combine({h, kh, hash_double(v)});
    }
    return h;
}

struct Point {
    std::map<std::string, double> t;

    double operator[](const char* k) const { return t.at(k); }
    int i(const char* k) const { return static_cast<int>(std::lround(t.at(k))); }
};

// NaN entries resolved against their partners
Point resolve(std::map<std::string, double> t) {
    for (const char* e : {"eta_w", "eta_q", "eta_b"})
        if (std::isnan(t[e])) t[e] = t["eta"];
    if (std::isnan(t["alpha0"])) t["alpha0"] = t["alpha1"];
    if (std::isnan(t["alpha1"])) t["alpha1"] = t["alpha0"];
    return {std::move(t)};
}

TaskConfig task_of(const Point& p, const ExperimentSpec& s) {
    return make_task(p.i("L"), p.i("R"), p["theta"], p["pi"], p.i("d"), parse_location_law(s.location_law));
}

StepSchedule schedule_of(const Point& p) {
    StepSchedule sc;
    sc.eta_b = p["eta_b"];
    sc.eta_w = p["eta_w"];
    sc.eta_q = p["eta_q"];
    sc.beta = p["beta"];
    sc.lambda = p["lambda"];
    sc.alpha0 = p["alpha0"];
    sc.alpha1 = p["alpha1"];
    return sc;
}

TheoryOptions theory_options(const Point& p) {
    TheoryOptions o;
    o.inner.hermite_order = p.i("hermite_order");
    return o;
}

// q with cosine gamma to xi and norm q_norm, in the plane of xi and the
// coordinate axis least aligned with it
Vec query_of(const TaskConfig& cfg, double gamma, double q_norm) {
    const Vec xi = cfg.signal();
    std::size_t j = 0;
    for (std::size_t k = 1; k < xi.size(); ++k)
        if (std::abs(xi[k]) < std::abs(xi[j])) j = k;
    Vec e(xi.size());
    for (std::size_t k = 0; k < xi.size(); ++k) e[k] = -xi[j] * xi[k];
    e[j] += 1.0;
    double n = 0.0;
    for (double x : e) n += x * x;
    n = std::sqrt(n);
    const double s = std::sqrt(std::max(0.0, 1.0 - gamma * gamma));
    Vec q(xi.size());
    for (std::size_t k = 0; k < xi.size(); ++k) q[k] = q_norm * (gamma * xi[k] + s * e[k] / n);
    return q;
}

FeatureKind kind_of(const std::string& model) { return parse_feature_kind(model); }

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t nw = std::min<std::size_t>(workers, n);
    for (std::size_t w = 0; w < nw; ++w)
        pool.emplace_back([&] {
            for (std::size_t k; (k = next.fetch_add(1)) < n;) fn(k);
        });
    for (auto& t : pool) t.join();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Stat {
    double mean = kNaN, se = kNaN;
    int n = 0;
};

Stat stat_of(const std::vector<double>& xs) {
    Stat s;
    double sum = 0.0, sum2 = 0.0;
    for (double x : xs)
        if (!std::isnan(x)) sum += x, ++s.n;
    if (s.n == 0) return s;
    s.mean = sum / s.n;
    for (double x : xs)
        if (!std::isnan(x)) sum2 += (x - s.mean) * (x - s.mean);
    s.se = s.n > 1 ? std::sqrt(sum2 / (s.n - 1) / s.n) : 0.0;
    return s;
}

// One theory value and one trial series per (point, model, quantity).
struct Cell {
    double theory = kNaN, theory_se = 0.0;
    std::vector<double> trials;
};

PanelRow make_row(const Point& p, const std::string& model, const Cell& c) {
    PanelRow r;
    r.tuple = p.t;
    r.model = model;
    r.theory = c.theory;
    r.theory_stderr = c.theory_se;
    const Stat s = stat_of(c.trials);
    r.empirical_mean = s.mean;
    r.empirical_stderr = s.se;
    r.trials_ok = s.n;
    r.z = s.n > 0 && !std::isnan(c.theory) ? z_score(c.theory, c.theory_se, s.mean, s.se) : kNaN;
    r.pass = std::abs(r.z) <= 3.0;
    return r;
}

std::string first_swept(const ExperimentSpec& s, const char* fallback) {
    return s.grid.empty() ? fallback : s.grid.begin()->first;
}

struct Failures {
    std::mutex m;
    std::vector<std::vector<std::string>> per_point;

    void add(std::size_t point, std::string msg) {
        std::lock_guard<std::mutex> lock(m);
        per_point[point].push_back(std::move(msg));
    }
};

// Per-point worker time, accumulated from tasks running on any thread.
struct Clock {
    std::mutex m;
    std::vector<double> seconds;

    void add(std::size_t point, double s) {
        std::lock_guard<std::mutex> lock(m);
        seconds[point] += s;
    }
};

Rng trial_rng(const ExperimentSpec& s, const Point& p, std::uint64_t trial) {
    return Rng(hash_combine({s.seed, tuple_hash(p.t), trial}), 0);
}

Rng theory_rng(const ExperimentSpec& s, const Point& p) {
    return Rng(hash_combine({s.seed, tuple_hash(p.t), kTheoryTag}), 1);
}

template <class Theory, class Trial>
void run_cells(const ExperimentSpec& spec, const std::vector<Point>& pts, std::size_t n_series,
               std::vector<std::vector<Cell>>& cells, Failures& fail, Clock& clock, Theory theory, Trial trial) {
    cells.assign(pts.size(), std::vector<Cell>(n_series));
    for (auto& row : cells)
        for (auto& c : row) c.trials.assign(spec.trials, kNaN);
    const std::size_t per_point = 1 + static_cast<std::size_t>(spec.trials);
    parallel_for(pts.size() * per_point, spec.workers, [&](std::size_t task) {
        const std::size_t t = task / per_point, k = task % per_point;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if (k == 0)
                theory(pts[t], cells[t]);
            else
                trial(pts[t], k - 1, cells[t]);
        } catch (const std::exception& e) {
            fail.add(t, (k == 0 ? std::string("theory: ") : "trial " + std::to_string(k - 1) + ": ") + e.what());
        }
        clock.add(t, seconds_since(t0));
    });
}

// ------------------------------------------------------------ experiments

void two_step_cosine(const ExperimentSpec& spec, const std::vector<Point>& pts, ExperimentReport& rep,
                     Failures& fail, Clock& clock) {
    const LossSpec loss = parse_loss(spec.loss);
    const TwoStepVariant variant = parse_two_step_variant(spec.variant);
    std::vector<std::vector<Cell>> cells;
    nlohmann::json printed = nlohmann::json::array();
    std::vector<nlohmann::json> printed_rows(pts.size());
    run_cells(
        spec, pts, 2, cells, fail, clock,
        [&](const Point& p, std::vector<Cell>& c) {
            const auto cfg = task_of(p, spec);
            const auto sc = schedule_of(p);
            const auto pr = predict_two_step(sc, loss, cfg, p["alpha0"], variant);
            c[0].theory = pr.s_w;
            c[1].theory = pr.s_q;
            const auto alt = predict_two_step(sc, loss, cfg, p["alpha0"], TwoStepVariant::as_printed);
            const std::size_t t = &p - pts.data();
            printed_rows[t] = {{"alpha0", p["alpha0"]}, {"s_w", alt.s_w}, {"s_q", alt.s_q}};
        },
        [&](const Point& p, std::size_t k, std::vector<Cell>& c) {
            Rng rng = trial_rng(spec, p, k);
            const auto r = run_two_steps(task_of(p, spec), schedule_of(p), loss, rng);
            c[0].trials[k] = r.stats.s_w;
            c[1].trials[k] = r.stats.s_q;
        });
    const std::string sw = first_swept(spec, "alpha0");
    Panel a{"s_w", sw, "abs(z) <= 3", {}}, b{"s_q", sw, "abs(z) <= 3", {}};
    for (std::size_t t = 0; t < pts.size(); ++t) {
        a.rows.push_back(make_row(pts[t], "", cells[t][0]));
        b.rows.push_back(make_row(pts[t], "", cells[t][1]));
        printed.push_back(printed_rows[t]);
    }
    rep.panels = {a, b};
    rep.extra["as_printed_prediction"] = printed;
}

TheorySolution solve_theory(TheoryModel m, const TaskConfig& cfg, const ScalarLaw* law, const Point& p,
                            const LossSpec& loss) {
    const auto opt = theory_options(p);
    const double a = p["alpha1"], lam = p["lambda"];
    if (lam == 0.0) return ridgeless_theory(m, cfg, law, a, loss, opt);
    switch (m) {
        case TheoryModel::pooled: return pooled_theory(cfg, a, lam, loss, opt);
        case TheoryModel::vectorized: return vectorized_theory(cfg, a, lam, loss, opt);
        default: return outer_minimize(*law, a, lam, loss, opt);
    }
}

void error_curves(const ExperimentSpec& spec, const std::vector<Point>& pts, ExperimentReport& rep, Failures& fail,
                  Clock& clock, bool fixed_query) {
    const LossSpec loss = parse_loss(spec.loss);
    const TwoStepVariant variant = parse_two_step_variant(spec.variant);
    const std::size_t M = spec.models.size();
    std::vector<std::vector<Cell>> cells;
    std::vector<nlohmann::json> extra(pts.size());
    run_cells(
        spec, pts, 2 * M, cells, fail, clock,
        [&](const Point& p, std::vector<Cell>& c) {
            const auto cfg = task_of(p, spec);
            const std::size_t t = &p - pts.data();
            extra[t] = nlohmann::json::object();
            for (std::size_t m = 0; m < M; ++m) {
                const TheoryModel tm = parse_theory_model(spec.models[m]);
                std::optional<ScalarLaw> law;
                if (tm == TheoryModel::attention) {
                    double gamma = p["gamma"], qn = p["q_norm"];
                    if (!fixed_query) {
                        const auto pr = predict_two_step(schedule_of(p), loss, cfg, p["alpha0"], variant);
                        gamma = pr.s_q, qn = pr.q2_norm;
                    }
                    Rng rng = theory_rng(spec, p);
                    law = sample_scalar_law(gamma, qn, p["beta"], cfg, static_cast<std::size_t>(p["n_mc"]), rng);
                    extra[t]["attention_gamma"] = gamma;
                    extra[t]["attention_q_norm"] = qn;
                    if (fixed_query && loss.kind == LossKind::quadratic && !law->degenerate)
                        extra[t]["ridgeless_e_test_inf"] = ridgeless_quadratic(tm, cfg, &*law).e_test_inf;
                }
                const auto s = solve_theory(tm, cfg, law ? &*law : nullptr, p, loss);
                c[2 * m].theory = s.e_test;
                c[2 * m].theory_se = s.e_test_se;
                c[2 * m + 1].theory = s.e_train;
                extra[t][spec.models[m]] = to_json(s);
            }
        },
        [&](const Point& p, std::size_t k, std::vector<Cell>& c) {
            const auto cfg = task_of(p, spec);
            const auto sc = schedule_of(p);
            const int n_test = p.i("n_test");
            for (std::size_t m = 0; m < M; ++m) {
                Rng rng = trial_rng(spec, p, k);
                const FeatureKind kind = kind_of(spec.models[m]);
                TrainedModel tr;
                if (fixed_query) {
                    const auto D = sample_batch(cfg, std::max(1L, std::lround(p["alpha1"] * cfg.d)), rng);
                    tr = stage4_erm(D, kind, query_of(cfg, p["gamma"], p["q_norm"]), p["beta"], p["lambda"], loss);
                } else {
                    tr = run_protocol(cfg, sc, loss, rng, kind).model;
                }
                c[2 * m].trials[k] = population_test_error(tr.model(), cfg, n_test, rng).rate;
                c[2 * m + 1].trials[k] = tr.diag.objective;
            }
        });
    const std::string sw = first_swept(spec, fixed_query ? "gamma" : "alpha1");
    for (std::size_t m = 0; m < M; ++m) {
        Panel te{"test_error_" + spec.models[m], sw, "abs(z) <= 3", {}};
        Panel tl{"train_loss_" + spec.models[m], sw, "abs(z) <= 3", {}};
        for (std::size_t t = 0; t < pts.size(); ++t) {
            te.rows.push_back(make_row(pts[t], spec.models[m], cells[t][2 * m]));
            tl.rows.push_back(make_row(pts[t], spec.models[m], cells[t][2 * m + 1]));
        }
        rep.panels.push_back(std::move(te));
        rep.panels.push_back(std::move(tl));
    }
    rep.extra["theory"] = extra;
}

// Majority vote over `trials` runs of stage-4 logistic ERM at lambda = 0.
// Stops as soon as the vote over all trials is decided; a tie counts as not separable.
struct Probe {
    double alpha;
    int separable = 0, runs = 0;
    bool verdict = false;
};

Probe probe(const ExperimentSpec& spec, const Point& p, const TaskConfig& cfg, FeatureKind kind, const Vec& q,
            double alpha, Failures& fail, std::size_t point) {
    const LossSpec loss{LossKind::logistic, true};
    const int T = spec.trials;
    Probe pr{alpha};
    const std::uint64_t atag = hash_double(alpha);
    for (int start = 0; start < T; start += spec.workers) {
        const int end = std::min(T, start + spec.workers);
        std::vector<int> out(end - start, -1);
        parallel_for(out.size(), spec.workers, [&](std::size_t j) {
            const int k = start + static_cast<int>(j);
            try {
                Rng rng(hash_combine({spec.seed, tuple_hash(p.t), kProbeTag, static_cast<std::uint64_t>(kind), atag,
                                      static_cast<std::uint64_t>(k)}),
                        0);
                const auto D = sample_batch(cfg, std::max(1L, std::lround(alpha * cfg.d)), rng);
                out[j] = stage4_erm(D, kind, q, p["beta"], 0.0, loss).diag.separable ? 1 : 0;
            } catch (const std::exception& e) {
                fail.add(point, to_string(kind) + " probe alpha=" + format_double(alpha) + " trial " +
                                    std::to_string(k) + ": " + e.what());
            }
        });
        for (int v : out) {
            ++pr.runs;
            if (v > 0) ++pr.separable;  // a failed run votes not separable
        }
        const int remaining = T - pr.runs;
        if (2 * pr.separable > T || 2 * (pr.separable + remaining) <= T) break;
    }
    pr.verdict = 2 * pr.separable > T;
    return pr;
}

void capacity_scan(const ExperimentSpec& spec, const std::vector<Point>& pts, ExperimentReport& rep,
                   Failures& fail, Clock& clock) {
    Panel panel{"capacity", first_swept(spec, "model"), "abs(empirical_mean / theory - 1) <= rel_tol", {}};
    nlohmann::json probes = nlohmann::json::array();
    std::map<std::string, std::vector<double>> predicted;
    for (std::size_t t = 0; t < pts.size(); ++t) {
        const Point& p = pts[t];
        for (const auto& model : spec.models) {
            const auto t0 = std::chrono::steady_clock::now();
            PanelRow row;
            row.tuple = p.t;
            row.model = model;
            row.theory = row.empirical_mean = row.empirical_stderr = row.z = kNaN;
            nlohmann::json log = {{"model", model}, {"point", t}, {"probes", nlohmann::json::array()}};
            try {
                const auto cfg = task_of(p, spec);
                const TheoryModel tm = parse_theory_model(model);
                std::optional<ScalarLaw> law;
                if (tm == TheoryModel::attention) {
                    Rng rng = theory_rng(spec, p);
                    law = sample_scalar_law(p["gamma"], p["q_norm"], p["beta"], cfg,
                                            static_cast<std::size_t>(p["n_mc"]), rng);
                }
                const auto cap = capacity(tm, cfg, law ? &*law : nullptr);
                row.theory = cap.alpha_star;
                predicted[model].push_back(cap.alpha_star);
                const FeatureKind kind = kind_of(model);
                const Vec q = kind == FeatureKind::attention ? query_of(cfg, p["gamma"], p["q_norm"]) : Vec{};
                auto run = [&](double a) {
                    const Probe pr = probe(spec, p, cfg, kind, q, a, fail, t);
                    log["probes"].push_back({{"alpha", a}, {"separable", pr.separable}, {"runs", pr.runs},
                                             {"verdict", pr.verdict}});
                    return pr.verdict;
                };
                const double f = p["bracket"];
                double lo = cap.alpha_star / f, hi = cap.alpha_star * f;
                // the bracket must straddle the empirical transition; widen it until it does
                for (int widen = 0; widen < 6 && !run(lo); ++widen) hi = lo, lo /= f;
                for (int widen = 0; widen < 6 && run(hi); ++widen) lo = hi, hi *= f;
                for (int s = 0; s < p.i("bisect_steps"); ++s) {
                    const double mid = 0.5 * (lo + hi);
                    (run(mid) ? lo : hi) = mid;
                }
                row.empirical_mean = 0.5 * (lo + hi);
                row.empirical_stderr = 0.5 * (hi - lo);
                row.trials_ok = spec.trials;
                row.z = (row.empirical_mean - row.theory) / row.empirical_stderr;
                row.pass = std::abs(row.empirical_mean / row.theory - 1.0) <= p["rel_tol"];
            } catch (const std::exception& e) {
                fail.add(t, model + ": " + e.what());
            }
            clock.add(t, seconds_since(t0));
            panel.rows.push_back(row);
            probes.push_back(log);
        }
    }
    rep.panels = {panel};
    rep.extra["probes"] = probes;
    auto& v = predicted["vectorized"];
    auto& a = predicted["attention"];
    auto& o = predicted["pooled"];
    if (!v.empty() && v.size() == a.size() && a.size() == o.size()) {
        bool order = true;
        for (std::size_t k = 0; k < v.size(); ++k) order = order && v[k] > a[k] && a[k] > o[k];
        rep.extra["ordering_vectorized_attention_pooled"] = order;
    }
}

void limits_table(const ExperimentSpec& spec, const std::vector<Point>& pts, ExperimentReport& rep, Failures& fail,
                  Clock& clock) {
    Panel panel{"pooled_limit", first_swept(spec, "L"), "abs(empirical_mean - theory) <= tol", {}};
    nlohmann::json table = nlohmann::json::array();
    for (std::size_t t = 0; t < pts.size(); ++t) {
        Point p = pts[t];
        const auto t0 = std::chrono::steady_clock::now();
        PanelRow row;
        row.tuple = p.t;
        row.theory = row.empirical_mean = row.z = kNaN;
        try {
            const double snr = p["snr"], pi = p["pi"];
            const int L = p.i("L"), R = p.i("R");
            const double theta = snr * std::sqrt(static_cast<double>(L)) / R;
            const auto cfg = make_task(L, R, theta, pi, 1);
            row.theory = limit_optimal_error(LimitModel::pooled, snr, pi).value;
            row.empirical_mean = finite_pooled_optimum(cfg).min;
            row.empirical_stderr = 0.0;
            row.trials_ok = 1;
            row.pass = std::abs(row.empirical_mean - row.theory) <= p["tol"];
            const bool threshold = theta / std::sqrt(2.0 * std::log(static_cast<double>(L))) > 1.0;
            for (LimitModel m : {LimitModel::pooled, LimitModel::vectorized, LimitModel::attention,
                                 LimitModel::approx_attention})
                for (double s : {0.0, snr, std::numeric_limits<double>::infinity()}) {
                    auto j = to_json(limit_optimal_error(m, s, pi, threshold));
                    j["snr"] = std::isinf(s) ? nlohmann::json("inf") : nlohmann::json(s);
                    j["pi"] = pi;
                    j["L"] = L;
                    table.push_back(j);
                }
        } catch (const std::exception& e) {
            fail.add(t, e.what());
        }
        clock.add(t, seconds_since(t0));
        panel.rows.push_back(row);
    }
    rep.panels = {panel};
    rep.extra["limits"] = table;
}

const std::vector<std::string> kValueColumns = {"theory",    "theory_stderr", "empirical_mean", "empirical_stderr",
                                                "mean",      "stderr",        "trials_ok",      "z",
                                                "pass"};

}  // namespace

// ------------------------------------------------------------------ spec

std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::two_step_cosine: return "two_step_cosine";
        case ExperimentKind::error_curves: return "error_curves";
        case ExperimentKind::capacity_scan: return "capacity_scan";
        case ExperimentKind::residual_vs_gamma: return "residual_vs_gamma";
        case ExperimentKind::limits_table: return "limits_table";
    }
    return "?";
}

ExperimentKind parse_experiment_kind(std::string_view s) {
    for (auto k : {ExperimentKind::two_step_cosine, ExperimentKind::error_curves, ExperimentKind::capacity_scan,
                   ExperimentKind::residual_vs_gamma, ExperimentKind::limits_table})
        if (s == to_string(k)) return k;
    throw ConfigError("name", "invalid value '" + std::string(s) +
                                  "' (expected two_step_cosine, error_curves, capacity_scan, residual_vs_gamma or "
                                  "limits_table)");
}

const std::vector<std::string>& parameter_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& p : param_defs()) v.push_back(p.name);
        return v;
    }();
    return names;
}

void ExperimentSpec::validate() const {
    if (trials < 1) throw ConfigError("trials", "must be >= 1");
    if (workers < 1) throw ConfigError("workers", "must be >= 1");
    if (!(required_pass_fraction >= 0.0 && required_pass_fraction <= 1.0))
        throw ConfigError("required_pass_fraction", "must lie in [0, 1]");
    for (const auto& [k, v] : grid) {
        if (v.empty()) throw ConfigError("grid." + k, "must be a nonempty list");
        if (params.count(k) && !std::isnan(params.at(k)) && params.at(k) != v.front())
            throw ConfigError("grid." + k, "also fixed in params");
    }
    for (const auto& m : models) {
        try {
            parse_theory_model(m);
        } catch (const ParameterError&) {
            throw ConfigError("models", "invalid model '" + m + "'");
        }
    }
    try {
        parse_loss(loss);
    } catch (const ParameterError&) {
        throw ConfigError("loss", "invalid loss '" + loss + "'");
    }
    try {
        parse_two_step_variant(variant);
    } catch (const ParameterError&) {
        throw ConfigError("variant", "invalid variant '" + variant + "'");
    }
    try {
        parse_location_law(location_law);
    } catch (const ParameterError&) {
        throw ConfigError("location_law", "invalid location law '" + location_law + "'");
    }
    auto has = [&](const char* k) { return grid.count(k) || (params.count(k) && !std::isnan(params.at(k))); };
    switch (name) {
        case ExperimentKind::two_step_cosine:
            if (!has("alpha0")) throw ConfigError("params.alpha0", "required");
            break;
        case ExperimentKind::error_curves:
        case ExperimentKind::residual_vs_gamma:
            if (!has("alpha1") && !has("alpha0")) throw ConfigError("params.alpha1", "required");
            if (models.empty()) throw ConfigError("models", "must be nonempty");
            break;
        case ExperimentKind::capacity_scan:
            if (models.empty()) throw ConfigError("models", "must be nonempty");
            break;
        case ExperimentKind::limits_table: break;
    }
}

std::size_t ExperimentSpec::grid_size() const {
    std::size_t n = 1;
    for (const auto& [k, v] : grid) n *= v.size();
    return n;
}

std::map<std::string, double> ExperimentSpec::point(std::size_t k) const {
    auto t = params;
    std::vector<const std::pair<const std::string, std::vector<double>>*> axes;
    for (const auto& e : grid) axes.push_back(&e);
    for (std::size_t a = axes.size(); a-- > 0;) {
        const auto& vals = axes[a]->second;
        t[axes[a]->first] = vals[k % vals.size()];
        k /= vals.size();
    }
    return t;
}

ExperimentSpec parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
    check_keys(j, "",
               {"name", "description", "params", "grid", "models", "loss", "variant", "location_law", "trials", "seed",
                "output_dir", "workers", "required_pass_fraction"});
    ExperimentSpec s;
    if (!j.contains("name")) throw ConfigError("name", "missing required key");
    s.name = parse_experiment_kind(string_at(j.at("name"), "name"));
    for (const auto& d : param_defs()) s.params[d.name] = d.def;

    std::set<std::string> names(parameter_names().begin(), parameter_names().end());
    if (j.contains("params")) {
        const auto& p = j.at("params");
        if (!p.is_object()) throw ConfigError("params", "expected an object");
        check_keys(p, "params", names);
        for (auto it = p.begin(); it != p.end(); ++it)
            if (!it.value().is_null())  // null keeps the default
                s.params[it.key()] = number_at(it.value(), "params." + it.key(), find_def(it.key())->integral);
    }
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        if (!g.is_object()) throw ConfigError("grid", "expected an object");
        check_keys(g, "grid", names);
        for (auto it = g.begin(); it != g.end(); ++it) {
            const std::string path = "grid." + it.key();
            if (j.contains("params") && j.at("params").contains(it.key())) throw ConfigError(path, "also fixed in params");
            if (!it.value().is_array() || it.value().empty()) throw ConfigError(path, "expected a nonempty list");
            std::vector<double> vals;
            for (std::size_t k = 0; k < it.value().size(); ++k)
                vals.push_back(number_at(it.value()[k], path + "[" + std::to_string(k) + "]",
                                         find_def(it.key())->integral));
            s.grid[it.key()] = vals;
            s.params[it.key()] = kNaN;
        }
    }
    s.models = default_models(s.name);
    if (j.contains("models")) {
        const auto& m = j.at("models");
        if (!m.is_array()) throw ConfigError("models", "expected a list of strings");
        s.models.clear();
        for (std::size_t k = 0; k < m.size(); ++k) s.models.push_back(string_at(m[k], "models[" + std::to_string(k) + "]"));
    }
    if (j.contains("loss")) s.loss = string_at(j.at("loss"), "loss");
    if (j.contains("variant")) s.variant = string_at(j.at("variant"), "variant");
    if (j.contains("location_law")) s.location_law = string_at(j.at("location_law"), "location_law");
    if (j.contains("output_dir")) s.output_dir = string_at(j.at("output_dir"), "output_dir");
    if (j.contains("trials")) {
        const auto& v = j.at("trials");
        if (!v.is_number_integer()) throw ConfigError("trials", "expected an integer");
        const auto n = v.get<long long>();
        if (n < 1) throw ConfigError("trials", "must be >= 1");
        s.trials = static_cast<int>(n);
    }
    if (j.contains("workers")) {
        const auto& v = j.at("workers");
        if (!v.is_number_integer()) throw ConfigError("workers", "expected an integer");
        s.workers = static_cast<int>(v.get<long long>());
    }
    if (j.contains("seed")) {
        const auto& v = j.at("seed");
        if (v.is_number_unsigned())
            s.seed = v.get<std::uint64_t>();
        else if (v.is_number_integer() && v.get<long long>() >= 0)
            s.seed = static_cast<std::uint64_t>(v.get<long long>());
        else
            throw ConfigError("seed", "expected a non-negative 64-bit integer");
    }
    if (j.contains("required_pass_fraction"))
        s.required_pass_fraction = number_at(j.at("required_pass_fraction"), "required_pass_fraction", false);
    s.validate();
    return s;
}

ExperimentSpec parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j);
}

nlohmann::json to_json(const ExperimentSpec& s) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : s.params)
        if (!s.grid.count(k)) params[k] = std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
    return {{"name", to_string(s.name)},
            {"params", params},
            {"grid", s.grid},
            {"models", s.models},
            {"loss", s.loss},
            {"variant", s.variant},
            {"location_law", s.location_law},
            {"trials", s.trials},
            {"seed", s.seed},
            {"output_dir", s.output_dir},
            {"workers", s.workers},
            {"required_pass_fraction", s.required_pass_fraction}};
}

// ------------------------------------------------------------------- run

double z_score(double theory, double theory_se, double mean, double se) {
    const double den = std::sqrt(se * se + theory_se * theory_se);
    if (den > 0.0) return (mean - theory) / den;
    if (mean == theory) return 0.0;
    return mean > theory ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

double Panel::pass_fraction() const {
    if (rows.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) n += r.pass;
    return static_cast<double>(n) / rows.size();
}

bool ExperimentReport::passed() const {
    for (const auto& p : panels)
        if (p.pass_fraction() < spec.required_pass_fraction) return false;
    if (extra.contains("ordering_vectorized_attention_pooled") && !extra.at("ordering_vectorized_attention_pooled"))
        return false;
    return !panels.empty();
}

ExperimentReport run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport rep;
    rep.spec = spec;
    rep.extra = nlohmann::json::object();
    std::vector<Point> pts;
    for (std::size_t k = 0; k < spec.grid_size(); ++k) pts.push_back(resolve(spec.point(k)));
    Failures fail;
    fail.per_point.resize(pts.size());
    Clock clock;
    clock.seconds.assign(pts.size(), 0.0);
    switch (spec.name) {
        case ExperimentKind::two_step_cosine: two_step_cosine(spec, pts, rep, fail, clock); break;
        case ExperimentKind::error_curves: error_curves(spec, pts, rep, fail, clock, false); break;
        case ExperimentKind::residual_vs_gamma: error_curves(spec, pts, rep, fail, clock, true); break;
        case ExperimentKind::capacity_scan: capacity_scan(spec, pts, rep, fail, clock); break;
        case ExperimentKind::limits_table: limits_table(spec, pts, rep, fail, clock); break;
    }
    for (std::size_t t = 0; t < pts.size(); ++t)
        rep.points.push_back({pts[t].t, clock.seconds[t], fail.per_point[t]});
    rep.wall_seconds = seconds_since(t0);
    return rep;
}

// ---------------------------------------------------------------- output

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string panel_csv(const Panel& p, const ExperimentSpec& spec) {
    std::vector<std::string> cols;
    if (spec.params.count(p.swept)) cols.push_back(p.swept);
    for (const auto& n : parameter_names())
        if (n != p.swept) cols.push_back(n);
    const bool with_model = std::any_of(p.rows.begin(), p.rows.end(), [](const PanelRow& r) { return !r.model.empty(); });
    std::ostringstream os;
    for (const auto& c : cols) os << c << ',';
    if (with_model) os << "model,";
    os << "theory,theory_stderr,empirical_mean,empirical_stderr,trials_ok,z,pass\n";
    for (const auto& r : p.rows) {
        for (const auto& c : cols) os << format_double(r.tuple.count(c) ? r.tuple.at(c) : kNaN) << ',';
        if (with_model) os << r.model << ',';
        os << format_double(r.theory) << ',' << format_double(r.theory_stderr) << ','
           << format_double(r.empirical_mean) << ',' << format_double(r.empirical_stderr) << ',' << r.trials_ok << ','
           << format_double(r.z) << ',' << (r.pass ? 1 : 0) << '\n';
    }
    return os.str();
}

nlohmann::json summary_json(const ExperimentReport& r) {
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(format_double(x)); };
    nlohmann::json panels = nlohmann::json::array();
    for (const auto& p : r.panels) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : p.rows) {
            nlohmann::json t = nlohmann::json::object();
            for (const auto& [k, v] : row.tuple) t[k] = num(v);
            rows.push_back({{"tuple", t},
                            {"model", row.model},
                            {"theory", num(row.theory)},
                            {"empirical_mean", num(row.empirical_mean)},
                            {"empirical_stderr", num(row.empirical_stderr)},
                            {"z", num(row.z)},
                            {"pass", row.pass}});
        }
        panels.push_back({{"name", p.name},
                          {"file", p.name + ".csv"},
                          {"pass_rule", p.pass_rule},
                          {"pass_fraction", p.pass_fraction()},
                          {"passed", p.pass_fraction() >= r.spec.required_pass_fraction},
                          {"rows", rows}});
    }
    nlohmann::json points = nlohmann::json::array();
    for (const auto& pt : r.points) {
        nlohmann::json t = nlohmann::json::object();
        for (const auto& [k, v] : pt.tuple) t[k] = num(v);
        points.push_back({{"tuple", t}, {"wall_seconds", pt.wall_seconds}, {"failures", pt.failures}});
    }
    return {{"version", artifact_version()},
            {"experiment", to_string(r.spec.name)},
            {"seed", r.spec.seed},
            {"spec", to_json(r.spec)},
            {"wall_seconds", r.wall_seconds},
            {"points", points},
            {"panels", panels},
            {"extra", r.extra},
            {"passed", r.passed()}};
}

void write_report(const ExperimentReport& r) {
    namespace fs = std::filesystem;
    fs::create_directories(r.spec.output_dir);
    for (const auto& p : r.panels) {
        std::ofstream out(fs::path(r.spec.output_dir) / (p.name + ".csv"), std::ios::binary);
        out << panel_csv(p, r.spec);
        if (!out) throw std::runtime_error("cannot write " + p.name + ".csv");
    }
    std::ofstream out(fs::path(r.spec.output_dir) / "summary.json");
    out << summary_json(r).dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write summary.json");
}

// ---------------------------------------------------------------- compare

CsvTable parse_csv(std::string_view text) {
    CsvTable t;
    auto split = [](std::string_view line) {
        std::vector<std::string> f;
        std::size_t start = 0;
        for (std::size_t k = 0; k <= line.size(); ++k)
            if (k == line.size() || line[k] == ',') {
                f.emplace_back(line.substr(start, k - start));
                start = k + 1;
            }
        return f;
    };
    std::size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        if (line.empty()) continue;
        auto f = split(line);
        if (header) {
            t.header = std::move(f);
            header = false;
        } else {
            if (f.size() != t.header.size())
                throw ParameterError("csv: row " + std::to_string(t.rows.size() + 1) + " has " +
                                     std::to_string(f.size()) + " fields, header has " +
                                     std::to_string(t.header.size()));
            t.rows.push_back(std::move(f));
        }
    }
    if (header) throw ParameterError("csv: empty input");
    return t;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParameterError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

CompareResult compare(const CsvTable& theory, const CsvTable& empirical) {
    auto col = [](const CsvTable& t, std::initializer_list<const char*> names) -> int {
        for (const char* n : names)
            for (std::size_t k = 0; k < t.header.size(); ++k)
                if (t.header[k] == n) return static_cast<int>(k);
        return -1;
    };
    const int tv = col(theory, {"theory", "mean"});
    const int tse = col(theory, {"theory_stderr"});
    const int ev = col(empirical, {"empirical_mean", "mean"});
    const int ese = col(empirical, {"empirical_stderr", "stderr"});
    if (tv < 0) throw ParameterError("compare: first table has no theory or mean column");
    if (ev < 0) throw ParameterError("compare: second table has no empirical_mean or mean column");

    auto tuple_cols = [](const CsvTable& t) {
        std::vector<std::size_t> c;
        for (std::size_t k = 0; k < t.header.size(); ++k)
            if (std::find(kValueColumns.begin(), kValueColumns.end(), t.header[k]) == kValueColumns.end())
                c.push_back(k);
        return c;
    };
    const auto tc = tuple_cols(theory), ec = tuple_cols(empirical);
    auto key_of = [](const CsvTable& t, const std::vector<std::size_t>& cols, const std::vector<std::string>& row) {
        std::vector<std::pair<std::string, std::string>> kv;
        for (auto c : cols) kv.emplace_back(t.header[c], row[c]);
        std::sort(kv.begin(), kv.end());
        return kv;
    };
    auto key_string = [](const std::vector<std::pair<std::string, std::string>>& kv) {
        std::string s;
        for (const auto& [k, v] : kv) s += (s.empty() ? "" : ";") + k + "=" + v;
        return s;
    };
    auto value = [](const std::string& s) { return s.empty() ? 0.0 : std::stod(s); };

    std::map<std::string, std::size_t> emp_index;
    for (std::size_t r = 0; r < empirical.rows.size(); ++r)
        emp_index[key_string(key_of(empirical, ec, empirical.rows[r]))] = r;
    std::set<std::string> used;
    CompareResult out;
    for (const auto& row : theory.rows) {
        const auto kv = key_of(theory, tc, row);
        const std::string key = key_string(kv);
        const auto it = emp_index.find(key);
        if (it == emp_index.end()) {
            out.unmatched.push_back(key);
            continue;
        }
        used.insert(key);
        const auto& er = empirical.rows[it->second];
        ComparisonRow c;
        c.tuple = kv;
        c.theory = value(row[tv]);
        c.empirical_mean = value(er[ev]);
        c.empirical_stderr = ese >= 0 ? value(er[ese]) : 0.0;
        c.z = z_score(c.theory, tse >= 0 ? value(row[tse]) : 0.0, c.empirical_mean, c.empirical_stderr);
        c.pass = std::abs(c.z) <= 3.0;
        out.rows.push_back(std::move(c));
    }
    for (const auto& [key, r] : emp_index)
        if (!used.count(key)) out.unmatched.push_back(key);
    return out;
}

CompareResult compare_files(const std::string& theory_csv, const std::string& empirical_csv) {
    return compare(read_csv(theory_csv), read_csv(empirical_csv));
}

}  // namespace tokenlab
