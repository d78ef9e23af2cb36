#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tokenlab/numerics.hpp"
#include "tokenlab/rng.hpp"

namespace tokenlab {

enum class LocationLaw { uniform_subsets, fixed_window };

struct TaskConfig {
    int L = 1;
    int R = 1;
    double theta = 0.0;
    double pi = 0.5;
    int d = 1;
    Vec xi;  // unit signal direction; empty means e_1
    LocationLaw location_law = LocationLaw::uniform_subsets;

    void validate() const;
    double xi_at(int j) const { return xi.empty() ? (j == 0 ? 1.0 : 0.0) : xi[j]; }
    Vec signal() const;
    double snr() const;  // theta R / sqrt(L)
};

TaskConfig make_task(int L, int R, double theta, double pi, int d,
                     LocationLaw law = LocationLaw::uniform_subsets);

struct Sample {
    int L = 0;
    int d = 0;
    Vec X;                      // L x d, row-major
    int y = -1;
    std::vector<std::uint8_t> v;  // empty when y = -1
};

struct SampleOptions {
    double noise = 1.0;  // scale of Z; 0 is a diagnostic hook for exact-formula tests
};

std::vector<std::uint8_t> sample_location(const TaskConfig& cfg, Rng& rng);
Sample sample_one(const TaskConfig& cfg, Rng& rng, const SampleOptions& opt = {});
std::vector<Sample> sample_batch(const TaskConfig& cfg, int n, Rng& rng, const SampleOptions& opt = {});

enum class FeatureKind { attention, pooled, vectorized, approx_attention };
enum class PhiKind { logistic, erf };

struct AttentionParams {
    Vec q;
    Vec w;
    double b = 0.0;
    double beta = 1.0;
};

double apply_phi(PhiKind phi, double x);

// Writes the feature of X (L x d, row-major) into out; out must hold
// feature_dim(kind, L, d) entries.
void features_into(FeatureKind kind, const double* X, int L, int d, const AttentionParams& params, PhiKind phi,
                   double* out);
Vec features(FeatureKind kind, const Vec& X, int L, int d, const AttentionParams& params,
             PhiKind phi = PhiKind::logistic);
std::size_t feature_dim(FeatureKind kind, int L, int d);

int classify(const Vec& f, const Vec& w, double b);
int classify(const double* f, const double* w, std::size_t n, double b);

struct Model {
    FeatureKind kind = FeatureKind::attention;
    AttentionParams params;
    PhiKind phi = PhiKind::logistic;
};

struct ErrorEstimate {
    double rate;
    double std_err;
};

ErrorEstimate empirical_test_error(const Model& model, const TaskConfig& cfg, int n_test, Rng& rng);

// Test error of a fixed linear model with the Gaussian noise integrated out
// exactly: closed form for pooled/vectorized, Monte-Carlo over the L-dim
// score vector for attention.
ErrorEstimate population_test_error(const Model& model, const TaskConfig& cfg, int n_mc, Rng& rng);

// Flat binary layout, little endian: "TLSB" magic, uint32 count, then per
// sample uint32 L, uint32 d, int32 label, L*d float64 row-major.
void write_samples(std::ostream& os, const std::vector<Sample>& samples);
std::vector<Sample> read_samples(std::istream& is);

std::string to_string(FeatureKind k);
FeatureKind parse_feature_kind(std::string_view s);
std::string to_string(LocationLaw law);
LocationLaw parse_location_law(std::string_view s);

}  // namespace tokenlab
