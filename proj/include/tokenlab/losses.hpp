#pragma once

#include <string>
#include <string_view>

namespace tokenlab {

// Further kinds plug in here; loss_eval, c_loss and prox switch on the kind.
enum class LossKind { logistic, quadratic };

struct LossSpec {
    LossKind kind = LossKind::logistic;
    bool margin_form = true;  // l(z, y) = l~(y z)
};

struct LossValue {
    double value;
    double d1;
    double d2;
};

LossValue loss_eval(const LossSpec& spec, double z, double y);
double loss_d1(const LossSpec& spec, double z, double y);
double loss_d3(const LossSpec& spec, double z, double y);
double c_loss(const LossSpec& spec);

// argmin_z l(z, y) + (x - z)^2 / (2 gamma)
double prox(const LossSpec& spec, double y, double x, double gamma);
// Same with the loss shifted: argmin_z l(z + shift, y) + (x - z)^2 / (2 gamma)
double prox_shifted(const LossSpec& spec, double y, double x, double gamma, double shift);

LossSpec parse_loss(std::string_view name);
std::string to_string(LossKind kind);

}  // namespace tokenlab
