#include "tokenlab/losses.hpp"

#include <cmath>

#include "tokenlab/errors.hpp"

namespace tokenlab {

namespace {

// sigma(t) = 1 / (1 + e^{-t}) without overflow
inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double logistic_prox(double y, double x, double gamma) {
    // root of g(z) = (z - x)/gamma + l'(z); |l'| < 1 so z lies within gamma of x
    double lo = x - gamma, hi = x + gamma;
    double z = x;
    double step_old = hi - lo;
    for (int it = 0; it < 200; ++it) {
        const double t = y * z;
        const double s = sigmoid(-t);
        const double g = (z - x) / gamma - y * s;
        const double dg = 1.0 / gamma + s * (1.0 - s);
        if (g > 0.0) hi = z;
        else if (g < 0.0) lo = z;
        else return z;
        double next = z - g / dg;
        // bisect when Newton leaves the bracket or fails to halve the previous step
        if (!(next > lo && next < hi) || std::abs(next - z) > 0.5 * std::abs(step_old)) next = 0.5 * (lo + hi);
        step_old = next - z;
        if (std::abs(next - z) <= 1e-15 * (1.0 + std::abs(z)) || hi - lo <= 4e-16 * (1.0 + std::abs(z))) return next;
        z = next;
    }
    throw NumericError("logistic prox: safeguarded Newton did not converge");
}

}  // namespace

LossValue loss_eval(const LossSpec& spec, double z, double y) {
    switch (spec.kind) {
        case LossKind::logistic: {
            const double t = y * z;
            const double value = std::log1p(std::exp(-std::abs(t))) + (t < 0.0 ? -t : 0.0);
            const double s = sigmoid(-t);
            return {value, -y * s, s * (1.0 - s)};
        }
        case LossKind::quadratic: {
            const double r = z - y;
            return {0.5 * r * r, r, 1.0};
        }
    }
    throw ParameterError("loss_eval: unknown loss kind");
}

double loss_d1(const LossSpec& spec, double z, double y) {
    if (spec.kind == LossKind::quadratic) return z - y;
    return -y * sigmoid(-y * z);
}

double loss_d3(const LossSpec& spec, double z, double y) {
    if (spec.kind == LossKind::quadratic) return 0.0;
    const double s = sigmoid(-y * z);
    return -y * (1.0 - 2.0 * s) * s * (1.0 - s);
}

double c_loss(const LossSpec& spec) {
    switch (spec.kind) {
        case LossKind::logistic: return 0.5;
        case LossKind::quadratic: return 1.0;
    }
    throw ParameterError("c_loss: unknown loss kind");
}

double prox(const LossSpec& spec, double y, double x, double gamma) {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ParameterError("prox: gamma must be finite and >= 0");
    if (gamma == 0.0) return x;
    switch (spec.kind) {
        case LossKind::quadratic: return (x + gamma * y) / (1.0 + gamma);
        case LossKind::logistic: return logistic_prox(y, x, gamma);
    }
    throw ParameterError("prox: unknown loss kind");
}

double prox_shifted(const LossSpec& spec, double y, double x, double gamma, double shift) {
    return prox(spec, y, x + shift, gamma) - shift;
}

LossSpec parse_loss(std::string_view name) {
    if (name == "logistic") return {LossKind::logistic, true};
    if (name == "quadratic" || name == "square") return {LossKind::quadratic, true};
    throw ParameterError("unknown loss: " + std::string(name));
}

std::string to_string(LossKind kind) { return kind == LossKind::logistic ? "logistic" : "quadratic"; }

}  // namespace tokenlab
