#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tokenlab/errors.hpp"

namespace tokenlab {

std::string artifact_version();

enum class ExperimentKind { two_step_cosine, error_curves, capacity_scan, residual_vs_gamma, limits_table };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(std::string_view s);

// Config validation failure; `path` is the offending key ("params.theta", "grid").
struct ConfigError : ParameterError {
    ConfigError(std::string key_path, const std::string& msg)
        : ParameterError(key_path + ": " + msg), path(std::move(key_path)) {}
    std::string path;
};

// Numeric parameters understood by every experiment. A name may appear in
// `params` (fixed) or in `grid` (swept), not both.
const std::vector<std::string>& parameter_names();

struct ExperimentSpec {
    ExperimentKind name = ExperimentKind::two_step_cosine;
    std::map<std::string, double> params;              // every name of parameter_names(), defaults filled
    std::map<std::string, std::vector<double>> grid;  // swept names, in sorted order
    std::vector<std::string> models;                   // attention / pooled / vectorized
    std::string loss = "logistic";
    std::string variant = "consistent";
    std::string location_law = "uniform_subsets";
    int trials = 10;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    int workers = 1;
    double required_pass_fraction = 1.0;  // per panel

    void validate() const;
    std::size_t grid_size() const;
    // Full parameter tuple of grid point k (last swept name varies fastest).
    std::map<std::string, double> point(std::size_t k) const;
};

ExperimentSpec parse_config(const nlohmann::json& j);
ExperimentSpec parse_config_file(const std::string& path);
nlohmann::json to_json(const ExperimentSpec& s);

struct ComparisonRow {
    std::vector<std::pair<std::string, std::string>> tuple;  // column name, value as written
    double theory = 0.0;
    double empirical_mean = 0.0;
    double empirical_stderr = 0.0;
    double z = 0.0;
    bool pass = false;  // |z| <= 3
};

// z = (mean - theory) / sqrt(se^2 + theory_se^2); a zero denominator gives
// z = 0 on an exact match and +-inf otherwise.
double z_score(double theory, double theory_se, double mean, double se);

struct PanelRow {
    std::map<std::string, double> tuple;
    std::string model;  // empty when the panel has a single model
    double theory = 0.0;
    double theory_stderr = 0.0;
    double empirical_mean = 0.0;
    double empirical_stderr = 0.0;
    int trials_ok = 0;
    double z = 0.0;
    bool pass = false;
};

struct Panel {
    std::string name;  // file stem, e.g. "test_error_pooled"
    std::string swept;  // swept variable shown first
    std::string pass_rule = "abs(z) <= 3";
    std::vector<PanelRow> rows;

    double pass_fraction() const;
};

struct PointLog {
    std::map<std::string, double> tuple;
    double wall_seconds = 0.0;
    std::vector<std::string> failures;  // "trial 3: <message>" entries
};

struct ExperimentReport {
    ExperimentSpec spec;
    std::vector<Panel> panels;
    std::vector<PointLog> points;
    nlohmann::json extra;  // experiment-specific tables (limits, capacity trajectories)
    double wall_seconds = 0.0;

    bool passed() const;  // every panel reaches required_pass_fraction
};

// Runs the spec. Trial k at grid point t draws from the stream
// hash(seed, hash(t's tuple), k), so output does not depend on `workers`.
ExperimentReport run_experiment(const ExperimentSpec& spec);

// Writes <output_dir>/<panel>.csv and <output_dir>/summary.json.
void write_report(const ExperimentReport& r);
std::string panel_csv(const Panel& p, const ExperimentSpec& spec);
nlohmann::json summary_json(const ExperimentReport& r);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::string& path);

struct CompareResult {
    std::vector<ComparisonRow> rows;
    std::vector<std::string> unmatched;  // tuple keys present in one file only
};

// Value columns: `theory` (else `mean`) from the first table, `empirical_mean`
// and `empirical_stderr` (else `mean`, `stderr`) from the second, plus an
// optional `theory_stderr`. Every other column belongs to the tuple.
CompareResult compare(const CsvTable& theory, const CsvTable& empirical);
CompareResult compare_files(const std::string& theory_csv, const std::string& empirical_csv);

// %.17g
std::string format_double(double x);

}  // namespace tokenlab
