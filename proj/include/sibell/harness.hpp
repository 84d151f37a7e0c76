#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sibell/analysis.hpp"
#include "sibell/core.hpp"
#include "sibell/models.hpp"
#include "sibell/settings.hpp"

// Experiment configuration, the end-to-end runner, and plot-data emission.
// Config format: flat `key = value` lines under [model] / [source] /
// [analysis] / [output] section headers; '#' comments. Documented key by key
// in the README.
namespace sibell {

struct ConfigError {
    int line = 0;
    std::string message;
};

struct AnalysisSpec {
    Stage stage = Stage::preparation;
    LabelScheme label = LabelScheme::joint;
};

enum class GaltonMode { single, sweep_uniform, sweep_sampled };

struct ExperimentConfig {
    // [model]
    std::string model_id;
    std::uint64_t trials = 0;
    std::uint64_t seed = 0;
    std::uint64_t seeds = 1;  // aggregate verdicts over seed .. seed+seeds-1
    FlukeCondition fluke_condition = FlukeCondition::none;
    double responder_rate = 0.3;
    int branch_n = 20;
    double branch_epsilon = 0.1;
    int galton_rows = 10;
    GaltonMode galton_mode = GaltonMode::sweep_uniform;
    std::string galton_ic;
    std::uint64_t galton_samples = 100000;
    bool debug_excluded = false;
    // [source]
    SourceKind source_kind = SourceKind::seeded_prng;
    std::string replay_path;
    AngleTable angles;  // defaults to the CHSH table
    bool correlated_pairs = false;
    // [analysis]
    std::optional<std::vector<AnalysisSpec>> si_specs;  // nullopt = model defaults
    bool si_off = false;
    bool theory_test = true;
    std::optional<bool> run_chsh;  // nullopt = model default
    Policy policy;
    // [output]
    std::string out_dir = "out";
    std::string log_name = "trials.log";
    std::string report_name = "report.json";
    std::string csv_name = "report.csv";

    std::string digest;  // hash of the config text
};

struct ParseResult {
    std::optional<ExperimentConfig> config;
    std::vector<ConfigError> errors;
};

ParseResult parse_config(const std::string& text);
ParseResult parse_config_file(const std::string& path);
std::string config_errors_to_string(const std::vector<ConfigError>& errors);

// "0.3pi", "0.3π", "pi/8", "3pi/8", "22.5deg", or plain radians.
double parse_angle_text(const std::string& text);

std::string config_digest_hex(const std::string& text);
bool is_known_model(const std::string& model_id);

// worker count: explicit argument > SI_BELL_SIM_THREADS > 1
unsigned worker_count_from_env();

std::vector<TrialRecord> generate_trials(
    std::uint64_t n, unsigned workers,
    const std::function<TrialRecord(std::uint64_t)>& trial_fn);

struct RunOutputs {
    std::vector<std::string> files;  // paths written, in write order
    std::string report_json;         // the bundle document
    int violated_reports = 0;
    int total_reports = 0;
};

// Writes trial log(s), runs the configured analyses, writes report + CSV.
// Deterministic: same config and seed give byte-identical outputs for any
// worker count. workers = 0 means "decide from the environment".
RunOutputs run_experiment(const ExperimentConfig& config, unsigned workers = 0);

// Analyses for an existing log, using the model's defaults (the `report`
// subcommand). Returns the bundle document.
std::string analyze_log(const Ensemble& ensemble, const Policy& policy,
                        std::string* csv_out = nullptr);

AngleTable infer_angle_table(std::span<const TrialRecord> trials);

// zigzag correlator sweep over angle differences, for overlaying empirical
// points on -cos 2*delta
struct SweepRow {
    double delta = 0.0;
    double e_empirical = 0.0;
    double e_exact = 0.0;
    std::uint64_t n = 0;
};
std::vector<SweepRow> run_angle_sweep(std::span<const double> deltas,
                                      std::uint64_t trials, std::uint64_t seed,
                                      bool correlated_pairs = false);

inline constexpr const char* kSweepCsvHeader = "delta,e_empirical,e_exact,n";
void emit_plot_data(const SIReport& report, const std::string& path);
void emit_plot_data(const CHSHEstimate& estimate, const AngleTable& table,
                    const std::string& path);
void emit_plot_data(std::span<const SweepRow> rows, const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace sibell
