#include "tokenlab/data_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>

#include "tokenlab/errors.hpp"
#include "tokenlab/kernels.hpp"

namespace tokenlab {

void TaskConfig::validate() const {
    if (L < 1) throw ParameterError("TaskConfig: L must be >= 1");
    if (R < 1 || R > L) throw ParameterError("TaskConfig: R must satisfy 1 <= R <= L");
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw ParameterError("TaskConfig: theta must be finite and >= 0");
    if (!(pi >= 0.0 && pi <= 1.0)) throw ParameterError("TaskConfig: pi must lie in [0,1]");
    if (d < 1) throw ParameterError("TaskConfig: d must be >= 1");
    if (!xi.empty()) {
        if (static_cast<int>(xi.size()) != d) throw ParameterError("TaskConfig: xi must have d entries");
        double n2 = 0.0;
        for (double v : xi) n2 += v * v;
        if (std::abs(std::sqrt(n2) - 1.0) > 1e-12) throw ParameterError("TaskConfig: xi must be a unit vector");
    }
}

Vec TaskConfig::signal() const {
    if (!xi.empty()) return xi;
    Vec e(d, 0.0);
    e[0] = 1.0;
    return e;
}

double TaskConfig::snr() const { return theta * R / std::sqrt(static_cast<double>(L)); }

TaskConfig make_task(int L, int R, double theta, double pi, int d, LocationLaw law) {
    TaskConfig c;
    c.L = L, c.R = R, c.theta = theta, c.pi = pi, c.d = d, c.location_law = law;
    c.validate();
    return c;
}

std::vector<std::uint8_t> sample_location(const TaskConfig& cfg, Rng& rng) {
    if (cfg.R > cfg.L || cfg.R < 1) throw ParameterError("sample_location: need 1 <= R <= L");
    std::vector<std::uint8_t> v(cfg.L, 0);
    if (cfg.location_law == LocationLaw::fixed_window) {
        std::fill(v.begin(), v.begin() + cfg.R, 1);
        return v;
    }
    // partial Fisher-Yates
    std::vector<int> idx(cfg.L);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < cfg.R; ++k) {
        const int j = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.L - k)));
        std::swap(idx[k], idx[j]);
        v[idx[k]] = 1;
    }
    return v;
}

Sample sample_one(const TaskConfig& cfg, Rng& rng, const SampleOptions& opt) {
    Sample s;
    s.L = cfg.L;
    s.d = cfg.d;
    s.y = rng.bernoulli(cfg.pi) ? 1 : -1;
    if (cfg.pi >= 1.0) s.y = 1;
    s.X.resize(static_cast<std::size_t>(cfg.L) * cfg.d);
    for (double& x : s.X) x = opt.noise * rng.normal();
    if (s.y == 1) {
        s.v = sample_location(cfg, rng);
        for (int l = 0; l < cfg.L; ++l) {
            if (!s.v[l]) continue;
            double* row = s.X.data() + static_cast<std::size_t>(l) * cfg.d;
            if (cfg.xi.empty()) row[0] += cfg.theta;
            else kernels::axpy(cfg.theta, cfg.xi.data(), row, cfg.d);
        }
    }
    return s;
}

std::vector<Sample> sample_batch(const TaskConfig& cfg, int n, Rng& rng, const SampleOptions& opt) {
    if (n < 1) throw ParameterError("sample_batch: n must be >= 1");
    cfg.validate();
    std::vector<Sample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(sample_one(cfg, rng, opt));
    return out;
}

double apply_phi(PhiKind phi, double x) {
    if (phi == PhiKind::erf) return 0.5 * (1.0 + std::erf(x));
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::size_t feature_dim(FeatureKind kind, int L, int d) {
    return kind == FeatureKind::vectorized ? static_cast<std::size_t>(L) * d : static_cast<std::size_t>(d);
}

void features_into(FeatureKind kind, const double* X, int L, int d, const AttentionParams& params, PhiKind phi,
                   double* out) {
    switch (kind) {
        case FeatureKind::vectorized:
            std::memcpy(out, X, sizeof(double) * static_cast<std::size_t>(L) * d);
            return;
        case FeatureKind::pooled: {
            Vec a(L, 1.0 / L);
            kernels::gemv_t(X, a.data(), L, d, out);
            return;
        }
        case FeatureKind::attention:
        case FeatureKind::approx_attention: {
            if (static_cast<int>(params.q.size()) != d) throw ParameterError("features: q must have d entries");
            Vec a(L);
            kernels::gemv(X, params.q.data(), L, d, a.data());
            if (kind == FeatureKind::attention) kernels::softmax(a.data(), L, params.beta);
            else
                for (double& t : a) t = apply_phi(phi, t);
            kernels::gemv_t(X, a.data(), L, d, out);
            return;
        }
    }
}

Vec features(FeatureKind kind, const Vec& X, int L, int d, const AttentionParams& params, PhiKind phi) {
    if (X.size() != static_cast<std::size_t>(L) * d) throw ParameterError("features: X must be L x d");
    Vec out(feature_dim(kind, L, d));
    features_into(kind, X.data(), L, d, params, phi, out.data());
    return out;
}

int classify(const double* f, const double* w, std::size_t n, double b) {
    return kernels::dot(f, w, n) + b >= 0.0 ? 1 : -1;
}

int classify(const Vec& f, const Vec& w, double b) {
    if (f.size() != w.size()) throw ParameterError("classify: dimension mismatch");
    return classify(f.data(), w.data(), f.size(), b);
}

ErrorEstimate empirical_test_error(const Model& model, const TaskConfig& cfg, int n_test, Rng& rng) {
    if (n_test < 100) throw ParameterError("empirical_test_error: n_test must be >= 100");
    const std::size_t dim = feature_dim(model.kind, cfg.L, cfg.d);
    if (model.params.w.size() != dim) throw ParameterError("empirical_test_error: w has the wrong dimension");
    Vec f(dim);
    long errors = 0;
    for (int i = 0; i < n_test; ++i) {
        const Sample s = sample_one(cfg, rng);
        features_into(model.kind, s.X.data(), cfg.L, cfg.d, model.params, model.phi, f.data());
        if (classify(f.data(), model.params.w.data(), dim, model.params.b) != s.y) ++errors;
    }
    const double p = static_cast<double>(errors) / n_test;
    return {p, std::sqrt(p * (1.0 - p) / n_test)};
}

namespace {

// Calls fn(v, weight) over the location law; exact enumeration when small.
template <class Fn>
void for_each_location(const TaskConfig& cfg, int n_mc, Rng& rng, Fn&& fn) {
    if (cfg.location_law == LocationLaw::fixed_window) {
        std::vector<std::uint8_t> v(cfg.L, 0);
        std::fill(v.begin(), v.begin() + cfg.R, 1);
        fn(v, 1.0);
        return;
    }
    double count = 1.0;
    for (int k = 0; k < cfg.R; ++k) count = count * (cfg.L - k) / (k + 1);
    if (count <= 1e4) {
        std::vector<std::uint8_t> v(cfg.L, 0);
        std::fill(v.end() - cfg.R, v.end(), 1);
        do fn(v, 1.0 / count);
        while (std::next_permutation(v.begin(), v.end()));
        return;
    }
    for (int i = 0; i < n_mc; ++i) fn(sample_location(cfg, rng), 1.0 / n_mc);
}

}  // namespace

ErrorEstimate population_test_error(const Model& model, const TaskConfig& cfg, int n_mc, Rng& rng) {
    const int L = cfg.L, d = cfg.d;
    const auto& w = model.params.w;
    const double b = model.params.b;
    const Vec xi = cfg.signal();
    if (w.size() != feature_dim(model.kind, L, d)) throw ParameterError("population_test_error: w has the wrong dimension");

    if (model.kind == FeatureKind::pooled) {
        const double wn = std::sqrt(kernels::dot(w.data(), w.data(), d));
        const double sd = wn / std::sqrt(static_cast<double>(L));
        const double mxi = kernels::dot(w.data(), xi.data(), d);
        if (sd == 0.0) return {b >= 0.0 ? 1.0 - cfg.pi : cfg.pi, 0.0};
        const double e = (1.0 - cfg.pi) * normal_cdf(b / sd) +
                         cfg.pi * normal_cdf(-(b + cfg.theta * cfg.R * mxi / L) / sd);
        return {e, 0.0};
    }
    if (model.kind == FeatureKind::vectorized) {
        const double wn = std::sqrt(kernels::dot(w.data(), w.data(), w.size()));
        Vec mk(L);
        for (int l = 0; l < L; ++l) mk[l] = cfg.theta * kernels::dot(w.data() + static_cast<std::size_t>(l) * d, xi.data(), d);
        if (wn == 0.0) return {b >= 0.0 ? 1.0 - cfg.pi : cfg.pi, 0.0};
        double pos = 0.0;
        for_each_location(cfg, std::max(n_mc, 1000), rng, [&](const std::vector<std::uint8_t>& v, double wt) {
            double m = 0.0;
            for (int l = 0; l < L; ++l) m += v[l] * mk[l];
            pos += wt * normal_cdf(-(b + m) / wn);
        });
        return {(1.0 - cfg.pi) * normal_cdf(b / wn) + cfg.pi * pos, 0.0};
    }

    // attention / approx: rows contribute (<z,q>, <z,w>) jointly Gaussian
    const auto& q = model.params.q;
    const double qq = kernels::dot(q.data(), q.data(), d);
    const double qw = kernels::dot(q.data(), w.data(), d);
    const double ww = kernels::dot(w.data(), w.data(), d);
    const double xq = kernels::dot(xi.data(), q.data(), d);
    const double xw = kernels::dot(xi.data(), w.data(), d);
    const double rq = qq > 0.0 ? qw / qq : 0.0;
    const double sigma = std::sqrt(std::max(0.0, ww - (qq > 0.0 ? qw * qw / qq : 0.0)));
    const double sq = std::sqrt(qq);
    Vec a(L), s(L);
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n_mc; ++i) {
        const bool pos = i % 2 == 1;  // stratified over the label, reweighted below
        std::vector<std::uint8_t> v;
        if (pos) v = sample_location(cfg, rng);
        for (int l = 0; l < L; ++l) a[l] = sq * rng.normal() + (pos && v[l] ? cfg.theta * xq : 0.0);
        s = a;
        if (model.kind == FeatureKind::attention) kernels::softmax(s.data(), L, model.params.beta);
        else
            for (double& t : s) t = apply_phi(model.phi, t);
        double mean = b, s2 = 0.0;
        for (int l = 0; l < L; ++l) {
            const double sig = pos && v[l] ? cfg.theta : 0.0;
            mean += s[l] * (sig * xw + rq * (a[l] - sig * xq));
            s2 += s[l] * s[l];
        }
        const double sd = sigma * std::sqrt(s2);
        double err;
        if (sd > 0.0) err = pos ? normal_cdf(-mean / sd) : normal_cdf(mean / sd);
        else err = pos ? (mean < 0.0 ? 1.0 : 0.0) : (mean >= 0.0 ? 1.0 : 0.0);
        const double wt = pos ? 2.0 * cfg.pi : 2.0 * (1.0 - cfg.pi);
        sum += wt * err;
        sum2 += wt * wt * err * err;
    }
    const double m = sum / n_mc;
    const double var = std::max(0.0, sum2 / n_mc - m * m);
    return {m, std::sqrt(var / n_mc)};
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParameterError("read_samples: truncated input");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_samples(std::ostream& os, const std::vector<Sample>& samples) {
    static_assert(sizeof(double) == 8);
    os.write("TLSB", 4);
    put_u32(os, static_cast<std::uint32_t>(samples.size()));
    for (const auto& s : samples) {
        if (s.X.size() != static_cast<std::size_t>(s.L) * s.d) throw ParameterError("write_samples: X is not L x d");
        put_u32(os, static_cast<std::uint32_t>(s.L));
        put_u32(os, static_cast<std::uint32_t>(s.d));
        put_u32(os, static_cast<std::uint32_t>(static_cast<std::int32_t>(s.y)));
        for (double x : s.X) {
            const std::uint64_t u = std::bit_cast<std::uint64_t>(x);
            put_u32(os, static_cast<std::uint32_t>(u));
            put_u32(os, static_cast<std::uint32_t>(u >> 32));
        }
    }
}

std::vector<Sample> read_samples(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "TLSB", 4) != 0) throw ParameterError("read_samples: bad magic");
    const std::uint32_t n = get_u32(is);
    std::vector<Sample> out(n);
    for (auto& s : out) {
        s.L = static_cast<int>(get_u32(is));
        s.d = static_cast<int>(get_u32(is));
        s.y = static_cast<std::int32_t>(get_u32(is));
        if (s.y != 1 && s.y != -1) throw ParameterError("read_samples: label must be +-1");
        s.X.resize(static_cast<std::size_t>(s.L) * s.d);
        for (double& x : s.X) {
            const std::uint64_t lo = get_u32(is), hi = get_u32(is);
            x = std::bit_cast<double>(lo | (hi << 32));
        }
    }
    return out;
}

std::string to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::attention: return "attention";
        case FeatureKind::pooled: return "pooled";
        case FeatureKind::vectorized: return "vectorized";
        case FeatureKind::approx_attention: return "approx_attention";
    }
    return "?";
}

FeatureKind parse_feature_kind(std::string_view s) {
    if (s == "attention") return FeatureKind::attention;
    if (s == "pooled") return FeatureKind::pooled;
    if (s == "vectorized") return FeatureKind::vectorized;
    if (s == "approx_attention") return FeatureKind::approx_attention;
    throw ParameterError("unknown model kind: " + std::string(s));
}

std::string to_string(LocationLaw law) {
    return law == LocationLaw::uniform_subsets ? "uniform_subsets" : "fixed_window";
}

LocationLaw parse_location_law(std::string_view s) {
    if (s == "uniform_subsets") return LocationLaw::uniform_subsets;
    if (s == "fixed_window") return LocationLaw::fixed_window;
    throw ParameterError("unknown location law: " + std::string(s));
}

}  // namespace tokenlab
