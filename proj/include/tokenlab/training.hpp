#pragma once

#include <Eigen/Dense>
#include <vector>

#include "json.hpp"
#include "tokenlab/data_model.hpp"
#include "tokenlab/losses.hpp"

namespace tokenlab {

struct StepSchedule {
    double eta_b = 0.5;
    double eta_w = 0.5;
    double eta_q = 0.5;
    double beta = 1.0;
    double lambda = 0.0;
    double alpha0 = 1.0;
    double alpha1 = 1.0;

    void validate() const;
};

struct FirstStep {
    Vec w1;
    double b1 = 0.0;
};

FirstStep stage12_first_step(const std::vector<Sample>& D0, const StepSchedule& sched, const LossSpec& loss);
Vec stage3_second_step(const std::vector<Sample>& D0, const Vec& w1, double b1, const StepSchedule& sched,
                       const LossSpec& loss);

// n x (p+1), last column is the constant 1 feeding the bias.
using DesignMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

DesignMatrix build_design(const std::vector<Sample>& D, FeatureKind kind, const AttentionParams& params,
                          PhiKind phi = PhiKind::logistic);

struct ErmOptions {
    double grad_tol = 1e-8;
    int max_iter = 500;
    double norm_cap = 1e6;     // lambda = 0 logistic: beyond this the data is declared separable
    int dense_max_dim = 4000;  // above this, Newton systems are solved by preconditioned CG
    bool stop_when_separated = true;
};

struct ErmDiagnostics {
    double objective = 0.0;   // mean loss + ridge term
    double mean_loss = 0.0;
    double train_error = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;  // sup-norm
    bool converged = false;
    bool separable = false;  // certified: every training margin is positive at lambda = 0
    bool hit_cap = false;
    std::vector<double> trace;  // objective after each accepted step, starting at (0, 0)
};

struct ErmResult {
    Vec w;
    double b = 0.0;
    ErmDiagnostics diag;
};

// argmin (1/n) sum l(<f_i,w> + b; y_i) + lambda/2 |w|^2 by damped Newton.
ErmResult solve_erm(const DesignMatrix& F, const std::vector<int>& y, double lambda, const LossSpec& loss,
                    const ErmOptions& opt = {});

struct TrainedModel {
    FeatureKind kind = FeatureKind::attention;
    Vec q;
    Vec w;
    double b = 0.0;
    double beta = 1.0;
    PhiKind phi = PhiKind::logistic;
    ErmDiagnostics diag;

    Model model() const;
};

TrainedModel stage4_erm(const std::vector<Sample>& D1, FeatureKind kind, const Vec& q2, double beta, double lambda,
                        const LossSpec& loss, const ErmOptions& opt = {});

struct TwoStepStats {
    double b1 = 0.0;
    double w1_norm = 0.0;
    double w1_align = 0.0;  // <w1, xi>
    double q2_norm = 0.0;
    double q2_align = 0.0;  // <q2, xi>
    double s_w = 0.0;
    double s_q = 0.0;
};

struct TwoStepResult {
    FirstStep first;
    Vec q2;
    TwoStepStats stats;
};

// Stages 1-3 only: draws D0 (n0 = round(alpha0 d)) and takes the two gradient steps.
TwoStepResult run_two_steps(const TaskConfig& cfg, const StepSchedule& sched, const LossSpec& loss, Rng& rng,
                            const SampleOptions& sopt = {});

struct ProtocolResult {
    TrainedModel model;
    TwoStepResult steps;
};

// Full protocol. `kind` selects the stage-4 featurizer; pooled/vectorized ignore q2.
ProtocolResult run_protocol(const TaskConfig& cfg, const StepSchedule& sched, const LossSpec& loss, Rng& rng,
                            FeatureKind kind = FeatureKind::attention, const ErmOptions& opt = {});

nlohmann::json to_json(const TrainedModel& m);
TrainedModel trained_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TwoStepStats& s);

}  // namespace tokenlab
