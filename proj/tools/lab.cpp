#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <optional>

#include "CLI11.hpp"
#include "tokenlab/experiments.hpp"
#include "tokenlab/theory_errors.hpp"

using namespace tokenlab;

namespace {

constexpr int kOk = 0, kFail = 1, kUsage = 2;

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
            std::optional<int> workers) {
    ExperimentSpec spec = parse_config_file(config);
    if (seed) spec.seed = *seed;
    if (!out.empty()) spec.output_dir = out;
    if (workers) spec.workers = *workers;
    spec.validate();
    const auto rep = run_experiment(spec);
    write_report(rep);
    for (const auto& p : rep.panels)
        std::printf("%-28s %3zu rows  pass %.0f%%\n", p.name.c_str(), p.rows.size(), 100.0 * p.pass_fraction());
    for (const auto& pt : rep.points)
        for (const auto& f : pt.failures) std::fprintf(stderr, "failure: %s\n", f.c_str());
    std::printf("%s -> %s (%.1f s)\n", rep.passed() ? "PASS" : "FAIL", spec.output_dir.c_str(), rep.wall_seconds);
    return rep.passed() ? kOk : kFail;
}

int cmd_compare(const std::string& a, const std::string& b) {
    const auto r = compare_files(a, b);
    bool all = true;
    for (const auto& row : r.rows) {
        std::string key;
        for (const auto& [k, v] : row.tuple) key += (key.empty() ? "" : " ") + k + "=" + v;
        std::printf("%s theory=%s mean=%s se=%s z=%s %s\n", key.c_str(), format_double(row.theory).c_str(),
                    format_double(row.empirical_mean).c_str(), format_double(row.empirical_stderr).c_str(),
                    format_double(row.z).c_str(), row.pass ? "pass" : "FAIL");
        all = all && row.pass;
    }
    for (const auto& u : r.unmatched) std::fprintf(stderr, "unmatched: %s\n", u.c_str());
    std::printf("%zu rows, %zu unmatched: %s\n", r.rows.size(), r.unmatched.size(), all ? "PASS" : "FAIL");
    return all ? kOk : kFail;
}

int cmd_limits(const std::string& model, double snr, double pi, const std::string& threshold) {
    std::optional<bool> th;
    if (threshold == "true") th = true;
    if (threshold == "false") th = false;
    const auto r = limit_optimal_error(parse_limit_model(model), snr, pi, th);
    std::cout << to_json(r).dump(2) << '\n';
    return kOk;
}

int cmd_capacity(const std::string& model, const std::string& config) {
    const ExperimentSpec spec = parse_config_file(config);
    const TheoryModel m = parse_theory_model(model);
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t k = 0; k < spec.grid_size(); ++k) {
        const auto t = spec.point(k);
        const auto cfg = make_task(static_cast<int>(t.at("L")), static_cast<int>(t.at("R")), t.at("theta"), t.at("pi"),
                                   static_cast<int>(t.at("d")), parse_location_law(spec.location_law));
        std::optional<ScalarLaw> law;
        if (m == TheoryModel::attention) {
            Rng rng(hash_combine({spec.seed, k}), 1);
            law = sample_scalar_law(t.at("gamma"), t.at("q_norm"), t.at("beta"), cfg,
                                    static_cast<std::size_t>(t.at("n_mc")), rng);
        }
        auto j = to_json(capacity(m, cfg, law ? &*law : nullptr));
        j["point"] = k;
        out.push_back(j);
    }
    std::cout << out.dump(2) << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tokenlab experiments"};
    app.require_subcommand(1);

    std::string config, out, a, b, model = "pooled", threshold = "unknown";
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    double snr = 0.0, pi = 0.5;

    auto* run = app.add_subcommand("run", "run an experiment config, write CSVs and summary.json");
    run->add_option("config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--out", out, "override the output directory");
    run->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

    auto* cmp = app.add_subcommand("compare", "join two CSVs on the parameter tuple and z-score them");
    cmp->add_option("theory_csv", a)->required()->check(CLI::ExistingFile);
    cmp->add_option("empirical_csv", b)->required()->check(CLI::ExistingFile);

    auto* lim = app.add_subcommand("limits", "large-L optimal error of a linear model");
    lim->add_option("--model", model, "pooled, vectorized, attention or approx_attention");
    lim->add_option("--snr", snr, "SNR (inf allowed)")->required();
    lim->add_option("--pi", pi, "positive-class fraction");
    lim->add_option("--threshold", threshold, "attention: true/false for theta > sqrt(2 log L)")
        ->check(CLI::IsMember({"true", "false", "unknown"}));

    auto* cap = app.add_subcommand("capacity", "predicted separability threshold per grid point");
    cap->add_option("--model", model, "attention, pooled or vectorized")->required();
    cap->add_option("--config", config, "experiment config supplying the task")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    try {
        if (*run) return cmd_run(config, seed, out, workers);
        if (*cmp) return cmd_compare(a, b);
        if (*lim) return cmd_limits(model, snr, pi, threshold);
        if (*cap) return cmd_capacity(model, config);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kUsage;
    } catch (const ParameterError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFail;
    }
    return kUsage;
}
