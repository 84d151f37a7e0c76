#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sibell/harness.hpp"

namespace {

using namespace sibell;

int cmd_simulate(const std::string& config_path, std::uint64_t* seed_override,
                 std::uint64_t* seeds_override, const std::string& out_override) {
    ParseResult parsed = parse_config_file(config_path);
    if (!parsed.config.has_value()) {
        std::cerr << "error: invalid config " << config_path << "\n"
                  << config_errors_to_string(parsed.errors);
        return 1;
    }
    ExperimentConfig cfg = *parsed.config;
    if (seed_override != nullptr) cfg.seed = *seed_override;
    if (seeds_override != nullptr) cfg.seeds = *seeds_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    const RunOutputs outputs = run_experiment(cfg);
    for (const auto& file : outputs.files) std::cout << "wrote " << file << "\n";
    std::cout << "reports: " << outputs.total_reports
              << " violated: " << outputs.violated_reports << "\n";
    return 0;
}

int cmd_analyze(const std::string& log_path, const std::string& stage,
                const std::string& label, const std::string& theory, const Policy& policy,
                const std::string& out_path) {
    const Ensemble ensemble = load_ensemble(log_path);
    SIReport report;
    if (!theory.empty()) {
        FrequencyDistribution dist;
        if (theory == "coin") {
            dist = FrequencyDistribution::from_probabilities(coin_theory_probabilities());
        } else if (theory == "mixture" || theory == "quantum") {
            const AngleTable table = infer_angle_table(ensemble.trials);
            const JointOutcomeTable pq = JointOutcomeTable::from_singlet(table);
            dist = FrequencyDistribution::from_probabilities(
                theory == "mixture" ? entanglement_mixture_probabilities(pq)
                                    : entanglement_quantum_probabilities(pq));
        } else {
            std::cerr << "error: unknown theory '" << theory
                      << "' (expected coin, mixture or quantum)\n";
            return 1;
        }
        report = si_test_theory(ensemble.trials, stage_from_name(stage), dist, policy);
    } else {
        report = si_test(ensemble.trials, stage_from_name(stage),
                         label_scheme_from_name(label), policy);
    }
    const std::string json = si_report_to_json(report) + "\n";
    if (out_path.empty()) {
        std::cout << json;
    } else {
        write_text_file(out_path, json);
        std::cout << "wrote " << out_path << "\n";
    }
    std::cout << "verdict: " << verdict_name(report.verdict) << "\n";
    return 0;
}

int cmd_chsh(const std::string& log_path, const std::string& angles,
             const std::string& out_path) {
    const Ensemble ensemble = load_ensemble(log_path);
    AngleTable table;
    if (angles.empty()) {
        table = infer_angle_table(ensemble.trials);
    } else {
        std::vector<double> values;
        std::size_t start = 0;
        while (start <= angles.size()) {
            std::size_t pos = angles.find(',', start);
            if (pos == std::string::npos) pos = angles.size();
            const std::string item = angles.substr(start, pos - start);
            if (!item.empty()) values.push_back(parse_angle_text(item));
            start = pos + 1;
        }
        if (values.size() != 4) {
            std::cerr << "error: --angles needs a0,a1,b0,b1\n";
            return 1;
        }
        table.wing_a = {canonicalize_angle(values[0]), canonicalize_angle(values[1])};
        table.wing_b = {canonicalize_angle(values[2]), canonicalize_angle(values[3])};
    }
    if (!table.is_two_by_two()) {
        std::cerr << "error: log settings do not form a 2x2 table; pass --angles\n";
        return 1;
    }
    const CHSHEstimate estimate = chsh(ensemble.trials, table);
    std::cout << chsh_to_json(estimate, table) << "\n";
    if (!out_path.empty()) {
        emit_plot_data(estimate, table, out_path);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_report(const std::string& log_path, const Policy& policy,
               const std::string& out_dir) {
    const Ensemble ensemble = load_ensemble(log_path);
    std::string csv;
    const std::string json = analyze_log(ensemble, policy, &csv);
    if (out_dir.empty()) {
        std::cout << json;
        return 0;
    }
    std::filesystem::create_directories(out_dir);
    const std::string stem =
        std::filesystem::path(log_path).stem().string();
    const std::string report_path =
        (std::filesystem::path(out_dir) / (stem + "-report.json")).string();
    const std::string csv_path =
        (std::filesystem::path(out_dir) / (stem + "-report.csv")).string();
    write_text_file(report_path, json);
    write_text_file(csv_path, csv);
    std::cout << "wrote " << report_path << "\nwrote " << csv_path << "\n";
    return 0;
}

int cmd_sweep(const std::string& deltas, std::uint64_t trials, std::uint64_t seed,
              bool correlated_pairs, const std::string& out_path) {
    std::vector<double> values;
    std::size_t start = 0;
    while (start <= deltas.size()) {
        std::size_t pos = deltas.find(',', start);
        if (pos == std::string::npos) pos = deltas.size();
        const std::string item = deltas.substr(start, pos - start);
        if (!item.empty()) values.push_back(parse_angle_text(item));
        start = pos + 1;
    }
    if (values.empty()) {
        std::cerr << "error: --deltas needs at least one angle\n";
        return 1;
    }
    const std::vector<SweepRow> rows =
        run_angle_sweep(values, trials, seed, correlated_pairs);
    if (!out_path.empty()) {
        emit_plot_data(rows, out_path);
        std::cout << "wrote " << out_path << "\n";
    } else {
        std::cout << kSweepCsvHeader << "\n";
        for (const auto& row : rows) {
            std::cout << row.delta << "," << row.e_empirical << "," << row.e_exact << ","
                      << row.n << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bell-experiment simulator and statistical-independence analyzer"};
    app.require_subcommand(1);

    std::string config_path, log_path, stage, label, theory, angles, deltas, out;
    std::uint64_t seed = 0, seeds = 1, trials = 100000;
    bool correlated_pairs = false;
    sibell::Policy policy;

    auto add_policy = [&policy](CLI::App* cmd) {
        cmd->add_option("--alpha", policy.alpha, "significance level");
        cmd->add_option("--tau", policy.tau, "TV distance threshold");
        cmd->add_option("--n-min", policy.n_min, "minimum label sample size");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "run an experiment config");
    simulate->add_option("config", config_path, "config file")->required();
    CLI::Option* seed_opt = simulate->add_option("--seed", seed, "override master seed");
    CLI::Option* seeds_opt =
        simulate->add_option("--seeds", seeds, "aggregate over this many seeds");
    simulate->add_option("--out", out, "override output directory");

    CLI::App* analyze = app.add_subcommand("analyze", "SI test over an existing log");
    analyze->add_option("log", log_path, "trial log")->required();
    analyze->add_option("--stage", stage, "snapshot stage")->required();
    analyze->add_option("--label", label, "label scheme: A, B or joint")
        ->default_val("joint");
    analyze->add_option("--theory", theory, "sense-2 theory: coin, mixture or quantum");
    analyze->add_option("--out", out, "write the report here");
    add_policy(analyze);

    CLI::App* chsh_cmd = app.add_subcommand("chsh", "CHSH estimate from a log");
    chsh_cmd->add_option("log", log_path, "trial log")->required();
    chsh_cmd->add_option("--angles", angles, "a0,a1,b0,b1 (default: inferred)");
    chsh_cmd->add_option("--out", out, "write correlator CSV here");

    CLI::App* report = app.add_subcommand("report", "default analyses for a log");
    report->add_option("log", log_path, "trial log")->required();
    report->add_flag("--all", "run every default analysis (always on)");
    report->add_option("--out", out, "output directory (default: stdout)");
    add_policy(report);

    CLI::App* sweep = app.add_subcommand("sweep", "zigzag correlator vs angle difference");
    sweep->add_option("--deltas", deltas, "comma-separated angle differences")->required();
    sweep->add_option("--trials", trials, "trials per point");
    sweep->add_option("--seed", seed, "master seed");
    sweep->add_flag("--correlated-pairs", correlated_pairs, "use the correlated-pairs convention");
    sweep->add_option("--out", out, "write sweep CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            return cmd_simulate(config_path, seed_opt->count() ? &seed : nullptr,
                                seeds_opt->count() ? &seeds : nullptr, out);
        }
        if (analyze->parsed()) {
            return cmd_analyze(log_path, stage, label, theory, policy, out);
        }
        if (chsh_cmd->parsed()) return cmd_chsh(log_path, angles, out);
        if (report->parsed()) return cmd_report(log_path, policy, out);
        if (sweep->parsed()) {
            return cmd_sweep(deltas, trials, seed, correlated_pairs, out);
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
