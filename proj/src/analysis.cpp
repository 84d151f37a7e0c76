#include "sibell/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>

#include <nlohmann/json.hpp>

namespace sibell {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

void FrequencyDistribution::add(const std::string& token, double weight) {
    if (weight < 0.0) throw std::invalid_argument("negative weight");
    if (weight == 0.0) return;
    counts_[token] += weight;
    total_ += weight;
}

FrequencyDistribution FrequencyDistribution::from_probabilities(
    const std::map<std::string, double>& p) {
    FrequencyDistribution d;
    for (const auto& [token, prob] : p) d.add(token, prob);
    if (std::abs(d.total_ - 1.0) > 1e-9) {
        throw std::invalid_argument("theory distribution must sum to 1");
    }
    return d;
}

double FrequencyDistribution::count(const std::string& token) const {
    auto it = counts_.find(token);
    return it == counts_.end() ? 0.0 : it->second;
}

double FrequencyDistribution::frequency(const std::string& token) const {
    if (total_ <= 0.0) return 0.0;
    return count(token) / total_;
}

FrequencyDistribution build_distribution(std::span<const TrialRecord> trials, Stage stage,
                                         const TrialFilter& filter) {
    FrequencyDistribution d;
    bool any = false;
    for (const auto& trial : trials) {
        if (filter && !filter(trial)) continue;
        any = true;
        const OnticState* state = trial.snapshot(stage);
        if (state == nullptr) {
            throw std::runtime_error("missing snapshot at stage " + stage_name(stage) +
                                     " for trial " + std::to_string(trial.trial_index));
        }
        d.add(canonical_encoding(*state));
    }
    if (!any) throw std::runtime_error("empty ensemble");
    return d;
}

double tv_distance(const FrequencyDistribution& p, const FrequencyDistribution& q) {
    double sum = 0.0;
    for (const auto& [token, _] : p.counts()) {
        sum += std::abs(p.frequency(token) - q.frequency(token));
    }
    for (const auto& [token, _] : q.counts()) {
        if (p.count(token) == 0.0) sum += q.frequency(token);
    }
    return 0.5 * sum;
}

GofResult chi_square_gof(const FrequencyDistribution& observed,
                         const FrequencyDistribution& reference) {
    const double n = observed.total();
    GofResult r;
    if (n <= 0.0) {
        r.degenerate = true;
        return r;
    }
    // union of supports; expected-below-5 cells pool into "other"
    std::vector<std::pair<double, double>> cells;  // (observed, expected)
    double other_obs = 0.0, other_exp = 0.0;
    auto visit = [&](const std::string& token) {
        const double e = reference.frequency(token) * n;
        const double o = observed.count(token);
        if (e < 5.0) {
            other_obs += o;
            other_exp += e;
        } else {
            cells.emplace_back(o, e);
        }
    };
    for (const auto& [token, _] : reference.counts()) visit(token);
    for (const auto& [token, _] : observed.counts()) {
        if (reference.count(token) == 0.0) visit(token);
    }
    if (other_exp > 0.0 || other_obs > 0.0) cells.emplace_back(other_obs, other_exp);

    r.dof = static_cast<int>(cells.size()) - 1;
    if (r.dof < 1) {
        r.degenerate = true;
        r.p = 1.0;
        return r;
    }
    for (const auto& [o, e] : cells) {
        if (e <= 0.0) {
            // observed mass outside the reference support
            r.chi2 = std::numeric_limits<double>::infinity();
            r.p = 0.0;
            return r;
        }
        const double d = o - e;
        r.chi2 += d * d / e;
    }
    boost::math::chi_squared dist(r.dof);
    r.p = boost::math::cdf(boost::math::complement(dist, r.chi2));
    return r;
}

std::string verdict_name(Verdict v) {
    switch (v) {
        case Verdict::obeyed: return "OBEYED";
        case Verdict::violated: return "VIOLATED";
        case Verdict::inconclusive: return "INCONCLUSIVE";
    }
    throw std::logic_error("unreachable verdict");
}

std::string sense_name(SISense s) {
    return s == SISense::ensemble_relative ? "ensemble-relative" : "theory-relative";
}

namespace {

Verdict combine_verdict(const std::vector<LabelRow>& rows, std::uint64_t n_min) {
    bool any_violated = false;
    bool any_small = false;
    for (const auto& row : rows) {
        any_violated = any_violated || row.violated;
        any_small = any_small || row.n < n_min;
    }
    if (any_violated) return Verdict::violated;
    if (any_small) return Verdict::inconclusive;
    return Verdict::obeyed;
}

}  // namespace

SIReport si_test(std::span<const TrialRecord> trials, Stage stage, LabelScheme scheme,
                 const Policy& policy) {
    SIReport report;
    report.stage = stage;
    report.label_scheme = label_scheme_name(scheme);
    report.sense = SISense::ensemble_relative;
    report.policy = policy;
    report.ensemble_distribution = build_distribution(trials, stage);

    std::map<std::string, FrequencyDistribution> sub;
    for (const auto& trial : trials) {
        const std::string label = trial_label(trial, scheme);
        sub[label].add(canonical_encoding(*trial.snapshot(stage)));
    }
    if (sub.size() < 2) {
        throw std::runtime_error("si_test needs at least 2 distinct labels, got " +
                                 std::to_string(sub.size()));
    }

    const bool single_token = report.ensemble_distribution.support_size() == 1;
    if (single_token) {
        // perfect correlation: rho(lambda) = 1 on one token
        report.notes.push_back("single-token distribution; chi-square skipped");
    }
    for (const auto& [label, dist] : sub) {
        LabelRow row;
        row.label = label;
        row.n = static_cast<std::uint64_t>(dist.total());
        row.tv = tv_distance(dist, report.ensemble_distribution);
        if (single_token) {
            row.chi2 = 0.0;
            row.dof = 0;
            row.p = 1.0;
            row.violated = false;
        } else {
            const GofResult gof = chi_square_gof(dist, report.ensemble_distribution);
            row.chi2 = gof.chi2;
            row.dof = gof.dof;
            row.p = gof.p;
            row.violated =
                row.p < policy.alpha && row.tv > policy.tau && row.n >= policy.n_min;
        }
        report.per_label.push_back(std::move(row));
    }
    report.verdict = combine_verdict(report.per_label, policy.n_min);
    return report;
}

SIReport si_test_theory(std::span<const TrialRecord> trials, Stage stage,
                        const FrequencyDistribution& theory, const Policy& policy) {
    SIReport report;
    report.stage = stage;
    report.label_scheme = "ensemble";
    report.sense = SISense::theory_relative;
    report.policy = policy;
    report.ensemble_distribution = build_distribution(trials, stage);

    bool outside_support = false;
    for (const auto& [token, count] : report.ensemble_distribution.counts()) {
        if (count > 0.0 && theory.count(token) == 0.0) {
            outside_support = true;
            report.notes.push_back("token '" + token + "' outside theory support");
            break;
        }
    }

    LabelRow row;
    row.label = "ensemble";
    row.n = static_cast<std::uint64_t>(report.ensemble_distribution.total());
    row.tv = tv_distance(report.ensemble_distribution, theory);
    const GofResult gof = chi_square_gof(report.ensemble_distribution, theory);
    row.chi2 = gof.chi2;
    row.dof = gof.dof;
    row.p = gof.p;
    row.violated = outside_support ||
                   (row.p < policy.alpha && row.tv > policy.tau && row.n >= policy.n_min);
    report.per_label.push_back(std::move(row));
    report.verdict = combine_verdict(report.per_label, policy.n_min);
    if (outside_support) report.verdict = Verdict::violated;
    return report;
}

double chsh_combination(double e00, double e01, double e10, double e11) {
    return e00 - e01 + e10 + e11;
}

CHSHEstimate chsh(std::span<const TrialRecord> trials, const AngleTable& table) {
    if (!table.is_two_by_two()) {
        throw std::invalid_argument("chsh requires a 2x2 angle table");
    }
    std::array<std::array<double, 2>, 2> sum{};
    std::array<std::array<double, 2>, 2> sum_sq{};
    std::array<std::array<std::uint64_t, 2>, 2> n{};
    for (const auto& trial : trials) {
        if (!trial.setting_a || !trial.setting_b || !trial.outcomes) continue;
        const int i = table.index_of(Wing::A, trial.setting_a->angle);
        const int j = table.index_of(Wing::B, trial.setting_b->angle);
        if (i < 0 || j < 0) {
            throw std::runtime_error("trial " + std::to_string(trial.trial_index) +
                                     " setting not in angle table");
        }
        const double prod = outcome_value(trial.outcomes->first) *
                            outcome_value(trial.outcomes->second);
        sum[i][j] += prod;
        sum_sq[i][j] += prod * prod;
        ++n[i][j];
    }
    CHSHEstimate est;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            if (n[i][j] == 0) {
                throw std::runtime_error("no trials for joint setting " +
                                         table.joint_token(i, j));
            }
            const double nn = static_cast<double>(n[i][j]);
            const double mean = sum[i][j] / nn;
            const double var = std::max(0.0, sum_sq[i][j] / nn - mean * mean);
            est.cell[i][j].e = mean;
            est.cell[i][j].se = std::sqrt(var / nn);
            est.cell[i][j].n = n[i][j];
        }
    }
    est.s = chsh_combination(est.cell[0][0].e, est.cell[0][1].e, est.cell[1][0].e,
                             est.cell[1][1].e);
    est.s_se = std::sqrt(est.cell[0][0].se * est.cell[0][0].se +
                         est.cell[0][1].se * est.cell[0][1].se +
                         est.cell[1][0].se * est.cell[1][0].se +
                         est.cell[1][1].se * est.cell[1][1].se);
    return est;
}

CHSHEstimate chsh_from_correlators(const std::array<std::array<double, 2>, 2>& e) {
    CHSHEstimate est;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            est.cell[i][j].e = e[i][j];
            est.cell[i][j].se = 0.0;
            est.cell[i][j].n = 0;
        }
    }
    est.s = chsh_combination(e[0][0], e[0][1], e[1][0], e[1][1]);
    est.s_se = 0.0;
    return est;
}

namespace {

ordered_json report_to_ordered_json(const SIReport& report) {
    ordered_json j;
    j["stage"] = stage_name(report.stage);
    j["label_scheme"] = report.label_scheme;
    j["sense"] = sense_name(report.sense);
    j["policy"] = {{"alpha", report.policy.alpha},
                   {"tau", report.policy.tau},
                   {"n_min", report.policy.n_min}};
    ordered_json dist = ordered_json::object();
    for (const auto& [token, count] : report.ensemble_distribution.counts()) {
        dist[token] = report.ensemble_distribution.frequency(token);
    }
    j["ensemble"] = {{"total", report.ensemble_distribution.total()},
                     {"distribution", dist}};
    ordered_json labels = ordered_json::array();
    for (const auto& row : report.per_label) {
        ordered_json r;
        r["label"] = row.label;
        r["n"] = row.n;
        r["tv"] = row.tv;
        r["chi_square"] = std::isinf(row.chi2) ? -1.0 : row.chi2;
        r["dof"] = row.dof;
        r["p_value"] = row.p;
        r["violated"] = row.violated;
        labels.push_back(std::move(r));
    }
    j["labels"] = std::move(labels);
    j["verdict"] = verdict_name(report.verdict);
    j["notes"] = report.notes;
    return j;
}

ordered_json chsh_to_ordered_json(const CHSHEstimate& estimate, const AngleTable& table) {
    ordered_json j;
    ordered_json cells = ordered_json::array();
    for (int i = 0; i < 2; ++i) {
        for (int k = 0; k < 2; ++k) {
            ordered_json c;
            c["setting"] = table.joint_token(i, k);
            c["e"] = estimate.cell[i][k].e;
            c["se"] = estimate.cell[i][k].se;
            c["n"] = estimate.cell[i][k].n;
            cells.push_back(std::move(c));
        }
    }
    j["correlators"] = std::move(cells);
    j["s"] = estimate.s;
    j["s_se"] = estimate.s_se;
    return j;
}

}  // namespace

std::string si_report_to_json(const SIReport& report, int indent) {
    return report_to_ordered_json(report).dump(indent);
}

std::string chsh_to_json(const CHSHEstimate& estimate, const AngleTable& table,
                         int indent) {
    return chsh_to_ordered_json(estimate, table).dump(indent);
}

std::string si_report_csv_rows(const SIReport& report) {
    std::string out;
    for (const auto& row : report.per_label) {
        out += sense_name(report.sense);
        out += ',';
        out += stage_name(report.stage);
        out += ',';
        out += report.label_scheme;
        out += ',';
        out += row.label;
        out += ',';
        out += std::to_string(row.n);
        out += ',';
        out += format_double(row.tv);
        out += ',';
        out += std::isinf(row.chi2) ? "inf" : format_double(row.chi2);
        out += ',';
        out += std::to_string(row.dof);
        out += ',';
        out += format_double(row.p);
        out += ',';
        out += row.violated ? "1" : "0";
        out += ',';
        out += verdict_name(report.verdict);
        out += '\n';
    }
    return out;
}

std::string chsh_csv_rows(const CHSHEstimate& estimate, const AngleTable& table) {
    std::string out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            out += "E" + std::to_string(i) + std::to_string(j);
            out += ',';
            out += angle_token(table.wing_a[i]);
            out += ',';
            out += angle_token(table.wing_b[j]);
            out += ',';
            out += format_double(estimate.cell[i][j].e);
            out += ',';
            out += format_double(estimate.cell[i][j].se);
            out += ',';
            out += std::to_string(estimate.cell[i][j].n);
            out += '\n';
        }
    }
    out += "S,,,";
    out += format_double(estimate.s);
    out += ',';
    out += format_double(estimate.s_se);
    out += ",\n";
    return out;
}

}  // namespace sibell
