#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sibell/core.hpp"
#include "sibell/settings.hpp"

// SI analyzer (both senses) and Bell statistics: frequency tables, total
// variation distance, chi-square significance, CHSH. Verdict policy: a label
// violates iff p < alpha AND tv > tau AND n >= n_min; a report is VIOLATED if
// any label violates, INCONCLUSIVE if none violates and some label is under
// n_min, OBEYED otherwise.
namespace sibell {

class FrequencyDistribution {
  public:
    void add(const std::string& token, double weight = 1.0);
    static FrequencyDistribution from_probabilities(const std::map<std::string, double>& p);

    double total() const { return total_; }
    double count(const std::string& token) const;
    double frequency(const std::string& token) const;
    std::size_t support_size() const { return counts_.size(); }
    const std::map<std::string, double>& counts() const { return counts_; }

  private:
    std::map<std::string, double> counts_;
    double total_ = 0.0;
};

using TrialFilter = std::function<bool(const TrialRecord&)>;

// Counts canonical tokens of the stage snapshot over the selected trials.
// Errors name the first trial missing the stage; an empty selection errors.
FrequencyDistribution build_distribution(std::span<const TrialRecord> trials, Stage stage,
                                         const TrialFilter& filter = {});

// 1/2 sum |p - q| over the union of supports.
double tv_distance(const FrequencyDistribution& p, const FrequencyDistribution& q);

struct Policy {
    double alpha = 1e-3;
    double tau = 0.01;
    std::uint64_t n_min = 1000;
};

struct GofResult {
    double chi2 = 0.0;
    int dof = 0;
    double p = 1.0;
    bool degenerate = false;  // too few cells to test
};

// Goodness of fit of observed counts against reference frequencies. Cells
// with expected count < 5 are merged into one "other" cell.
GofResult chi_square_gof(const FrequencyDistribution& observed,
                         const FrequencyDistribution& reference);

enum class Verdict { obeyed, violated, inconclusive };
std::string verdict_name(Verdict v);

enum class SISense { ensemble_relative, theory_relative };
std::string sense_name(SISense s);

struct LabelRow {
    std::string label;
    std::uint64_t n = 0;
    double tv = 0.0;
    double chi2 = 0.0;
    int dof = 0;
    double p = 1.0;
    bool violated = false;
};

struct SIReport {
    Stage stage = Stage::preparation;
    std::string label_scheme;  // "A", "B", "joint", or "ensemble" for sense 2
    SISense sense = SISense::ensemble_relative;
    Policy policy;
    FrequencyDistribution ensemble_distribution;
    std::vector<LabelRow> per_label;  // sorted by label token
    Verdict verdict = Verdict::obeyed;
    std::vector<std::string> notes;
};

// Sense 1: each rho(lambda|Z) against the pooled rho(lambda).
SIReport si_test(std::span<const TrialRecord> trials, Stage stage, LabelScheme scheme,
                 const Policy& policy = {});

// Sense 2: the whole ensemble against a declared generating distribution.
// Observed tokens outside the theory support force VIOLATED.
SIReport si_test_theory(std::span<const TrialRecord> trials, Stage stage,
                        const FrequencyDistribution& theory, const Policy& policy = {});

struct CorrelatorCell {
    double e = 0.0;
    double se = 0.0;
    std::uint64_t n = 0;
};

struct CHSHEstimate {
    std::array<std::array<CorrelatorCell, 2>, 2> cell{};  // [index_a][index_b]
    double s = 0.0;
    double s_se = 0.0;
};

// S = E(a0,b0) - E(a0,b1) + E(a1,b0) + E(a1,b1)
double chsh_combination(double e00, double e01, double e10, double e11);

// Empirical correlators per joint setting; errors when a cell has no trials.
CHSHEstimate chsh(std::span<const TrialRecord> trials, const AngleTable& table);
CHSHEstimate chsh_from_correlators(const std::array<std::array<double, 2>, 2>& e);

// JSON (stable key order) and per-label CSV rows.
std::string si_report_to_json(const SIReport& report, int indent = 2);
std::string chsh_to_json(const CHSHEstimate& estimate, const AngleTable& table,
                         int indent = 2);
inline constexpr const char* kSiCsvHeader =
    "kind,stage,labels,label,n,tv,chi_square,dof,p_value,violated,verdict";
std::string si_report_csv_rows(const SIReport& report);
inline constexpr const char* kChshCsvHeader = "row,angle_a,angle_b,e,se,n";
std::string chsh_csv_rows(const CHSHEstimate& estimate, const AngleTable& table);

}  // namespace sibell
