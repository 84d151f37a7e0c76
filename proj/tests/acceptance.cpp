// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance is pinned here, not calibrated at run time.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "sibell/harness.hpp"

using namespace sibell;
namespace fs = std::filesystem;

namespace {

constexpr double kTwoSqrtTwo = 2.8284271247461903;
constexpr std::uint64_t kSeed = 42;

struct Check {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += "FAILED: " + what;
        }
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

SettingSource prng_source(std::uint64_t seed) {
    SettingSource s;
    s.kind = SourceKind::seeded_prng;
    s.seed = seed;
    s.table = AngleTable::chsh_default();
    return s;
}

std::vector<TrialRecord> zigzag_run_100k;  // shared by criteria 1 and 2

// exact integer binomial coefficients (oracle)
double binom(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

double chi2_p(double chi2, int dof) {
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, chi2));
}

// chi-square match of per-setting outcome counts against P_Q
double min_setting_p_value(const std::vector<TrialRecord>& trials,
                           const JointOutcomeTable& pq) {
    std::map<std::pair<int, int>, std::array<std::uint64_t, 4>> counts;
    for (const auto& t : trials) {
        const int i = pq.table.index_of(Wing::A, t.setting_a->angle);
        const int j = pq.table.index_of(Wing::B, t.setting_b->angle);
        const int cell = 2 * outcome_slot(t.outcomes->first) +
                         outcome_slot(t.outcomes->second);
        ++counts[{i, j}][cell];
    }
    double min_p = 1.0;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const auto& c = counts[{i, j}];
            const double n = c[0] + c[1] + c[2] + c[3];
            double chi2 = 0.0;
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    const double e =
                        pq.prob(i, j, outcome_from_slot(a), outcome_from_slot(b)) * n;
                    const double d = c[2 * a + b] - e;
                    chi2 += d * d / e;
                }
            }
            min_p = std::min(min_p, chi2_p(chi2, 3));
        }
    }
    return min_p;
}

Check criterion1_zigzag_chsh() {
    Check c;
    const auto start = std::chrono::steady_clock::now();
    const SettingSource source = prng_source(kSeed);
    zigzag_run_100k.clear();
    zigzag_run_100k.reserve(100000);
    for (std::uint64_t i = 0; i < 100000; ++i) {
        zigzag_run_100k.push_back(run_zigzag(i, kSeed, source));
    }
    const CHSHEstimate est = chsh(zigzag_run_100k, source.table);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    c.require(std::abs(std::abs(est.s) - kTwoSqrtTwo) <= 0.05,
              "|S| within 0.05 of 2*sqrt(2), got " + fmt(est.s));
    c.require(elapsed < 10.0, "runtime < 10 s, got " + fmt(elapsed));
    c.note("S=" + fmt(est.s) + ", runtime=" + fmt(elapsed) + "s");
    return c;
}

Check criterion2_zigzag_si() {
    Check c;
    const Policy policy;
    const SIReport temporal =
        si_test(zigzag_run_100k, Stage::source_temporal, LabelScheme::wing_a, policy);
    c.require(temporal.verdict == Verdict::violated, "source-temporal vs X VIOLATED");

    const SIReport step1 =
        si_test(zigzag_run_100k, Stage::causal_step_1, LabelScheme::wing_a, policy);
    c.require(step1.verdict == Verdict::obeyed, "causal-step-1 vs X OBEYED");
    c.require(step1.ensemble_distribution.support_size() == 1 &&
                  step1.ensemble_distribution.frequency("Q:mixed") == 1.0,
              "rho(lambda1) = 1 on a single token");

    const SIReport step3 =
        si_test(zigzag_run_100k, Stage::causal_step_3, LabelScheme::wing_b, policy);
    c.require(step3.verdict == Verdict::obeyed, "causal-step-3 vs Y OBEYED");
    c.note("verdicts: " + verdict_name(temporal.verdict) + "/" +
           verdict_name(step1.verdict) + "/" + verdict_name(step3.verdict));
    zigzag_run_100k.clear();
    zigzag_run_100k.shrink_to_fit();
    return c;
}

Check criterion3_goblin_tables() {
    Check c;
    const AngleTable table = AngleTable::chsh_default();
    const JointOutcomeTable pq = JointOutcomeTable::from_singlet(table);
    const GoblinTables g = derive_goblin1_tables(table, pq);
    // independent brute-force summation over the 16x4 table
    double worst_marginal = 0.0;
    for (int joint = 0; joint < 4; ++joint) {
        double marginal = 0.0;
        for (int l = 0; l < kLambdaCount; ++l) {
            marginal += g.lambda_prior[l] * g.setting_weights[l][joint];
        }
        worst_marginal = std::max(worst_marginal, std::abs(marginal - 0.25));
    }
    c.require(worst_marginal <= 1e-12,
              "uniform setting marginal within 1e-12, off by " +
                  std::to_string(worst_marginal));
    double worst_repro = 0.0;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    double mass = 0.0;
                    for (int l = 0; l < kLambdaCount; ++l) {
                        if (outcome_slot(lambda_component(l, i)) == a &&
                            outcome_slot(lambda_component(l, 2 + j)) == b) {
                            mass += g.lambda_prior[l] * g.setting_weights[l][2 * i + j];
                        }
                    }
                    worst_repro = std::max(
                        worst_repro,
                        std::abs(mass / 0.25 - pq.prob(i, j, outcome_from_slot(a),
                                                       outcome_from_slot(b))));
                }
            }
        }
    }
    c.require(worst_repro <= 1e-12,
              "P_Q reproduced within 1e-12, off by " + std::to_string(worst_repro));
    c.note("marginal off " + std::to_string(worst_marginal) + ", repro off " +
           std::to_string(worst_repro));
    return c;
}

Check criterion4_goblin_variants() {
    Check c;
    const AngleTable table = AngleTable::chsh_default();
    const JointOutcomeTable pq = JointOutcomeTable::from_singlet(table);
    const GoblinTables tables = derive_goblin1_tables(table, pq);
    const SettingSource source = prng_source(kSeed);
    const Policy policy;
    for (int variant = 1; variant <= 3; ++variant) {
        std::vector<TrialRecord> trials;
        trials.reserve(100000);
        for (std::uint64_t i = 0; i < 100000; ++i) {
            trials.push_back(run_goblin(variant, tables, pq, i, kSeed, source));
        }
        const std::string tag = "goblin-" + std::to_string(variant);
        const double min_p = min_setting_p_value(trials, pq);
        c.require(min_p > 1e-3, tag + " per-setting chi-square p > 1e-3, got " +
                                    std::to_string(min_p));
        const CHSHEstimate est = chsh(trials, table);
        c.require(std::abs(std::abs(est.s) - kTwoSqrtTwo) <= 0.05,
                  tag + " |S| within 0.05 of 2*sqrt(2), got " + fmt(est.s));
        const SIReport report =
            si_test(trials, Stage::preparation, LabelScheme::joint, policy);
        c.require(report.verdict == Verdict::violated, tag + " si_test VIOLATED");
        c.note(tag + ": S=" + fmt(est.s) + " minp=" + fmt(min_p) + " " +
               verdict_name(report.verdict));
    }
    return c;
}

Check criterion5_local_hv() {
    Check c;
    const SettingSource source = prng_source(kSeed);
    const Policy policy;

    // main run at N = 1e5
    std::vector<TrialRecord> trials;
    trials.reserve(100000);
    for (std::uint64_t i = 0; i < 100000; ++i) {
        trials.push_back(run_local_hv(i, kSeed, source));
    }
    const SIReport report = si_test(trials, Stage::preparation, LabelScheme::joint, policy);
    c.require(report.verdict == Verdict::obeyed, "N=1e5 run OBEYED");
    const CHSHEstimate est = chsh(trials, source.table);
    c.require(std::abs(est.s) <= 2.05, "|S| <= 2.05, got " + fmt(est.s));
    trials.clear();
    trials.shrink_to_fit();

    // false-violation rate over 100 independent seeds
    int violations = 0;
    for (std::uint64_t seed = 1000; seed < 1100; ++seed) {
        const SettingSource s = prng_source(seed);
        std::vector<TrialRecord> batch;
        batch.reserve(20000);
        for (std::uint64_t i = 0; i < 20000; ++i) {
            batch.push_back(run_local_hv(i, seed, s));
        }
        if (si_test(batch, Stage::preparation, LabelScheme::joint, policy).verdict ==
            Verdict::violated) {
            ++violations;
        }
    }
    c.require(violations <= 5,
              "false violations <= 5/100 seeds, got " + std::to_string(violations));

    // exact enumerated S under the uniform prior
    std::array<double, kLambdaCount> uniform{};
    uniform.fill(1.0 / kLambdaCount);
    const CHSHEstimate exact = chsh_from_correlators(lambda_prior_correlators(uniform));
    c.require(std::abs(exact.s) <= 2.0 + 1e-12,
              "exact |S| <= 2 within 1e-12, got " + std::to_string(exact.s));
    c.note("S=" + fmt(est.s) + ", false violations " + std::to_string(violations) +
           "/100, exact S=" + fmt(exact.s));
    return c;
}

Check criterion6_flukes() {
    Check c;
    const Policy policy;
    const auto theory =
        FrequencyDistribution::from_probabilities(coin_theory_probabilities());
    {
        const Ensemble forced =
            run_fluke_coin(1000000, kSeed, FlukeCondition::force_all_heads);
        const SIReport r = si_test_theory(forced.trials, Stage::preparation, theory, policy);
        c.require(r.verdict == Verdict::violated, "forced all-heads VIOLATED");
        c.require(r.per_label[0].tv == 0.5,
                  "forced all-heads TV exactly 0.5, got " + fmt(r.per_label[0].tv));
    }
    {
        const Ensemble fair = run_fluke_coin(1000000, kSeed, FlukeCondition::none);
        const SIReport r = si_test_theory(fair.trials, Stage::preparation, theory, policy);
        c.require(r.verdict == Verdict::obeyed, "unconditioned coins OBEYED");
    }
    {
        const JointOutcomeTable pq = JointOutcomeTable::from_singlet(AngleTable::chsh_default());
        const Ensemble kept =
            run_fluke_entanglement(200000, kSeed, FlukeCondition::post_select_obeyed, pq);
        const CHSHEstimate est = chsh(kept.trials, pq.table);
        c.require(std::abs(std::abs(est.s) - kTwoSqrtTwo) <= 0.05,
                  "post-selected |S| within 0.05 of 2*sqrt(2), got " + fmt(est.s));
        const auto mixture = FrequencyDistribution::from_probabilities(
            entanglement_mixture_probabilities(pq));
        const SIReport r = si_test_theory(kept.trials, Stage::preparation, mixture, policy);
        c.require(r.verdict == Verdict::violated, "post-selected vs mixture VIOLATED");
        c.note("kept " + std::to_string(kept.trials.size()) + " trials, S=" + fmt(est.s) +
               ", TV=" + fmt(r.per_label[0].tv));
    }
    return c;
}

Check criterion7_branches() {
    Check c;
    const int n = 20;
    const auto weights = branch_heads_weights(n);
    c.require(weights[n] == std::ldexp(1.0, -20),
              "all-heads weight exactly 2^-20, got " + std::to_string(weights[n]));
    const double ten_heads_oracle = binom(20, 10) * std::ldexp(1.0, -20);
    c.require(std::abs(weights[10] - ten_heads_oracle) <= 1e-12,
              "weight of 10-heads branches within 1e-12 of C(20,10)/2^20");
    double cdf7 = 0.0;
    for (int k = 0; k <= 7; ++k) cdf7 += binom(20, k);
    const double fluke_oracle = 2.0 * cdf7 * std::ldexp(1.0, -20);
    const double fluke = fluke_branch_weight(n, 0.1);
    c.require(std::abs(fluke - fluke_oracle) <= 1e-12,
              "fluke-branch weight within 1e-12 of the binomial CDF oracle");
    c.note("all-heads=" + std::to_string(weights[n]) + ", fluke(0.1)=" + fmt(fluke));
    return c;
}

Check criterion8_galton() {
    Check c;
    c.require(run_galton_single(10, std::vector<int>(10, 0)) == 0,
              "all-zeros IC lands in the leftmost box");
    const auto boxes = galton_sweep_exhaustive(10);
    bool exact = boxes.size() == 11;
    for (int k = 0; exact && k <= 10; ++k) {
        exact = boxes[k] == static_cast<std::uint64_t>(binom(10, k));
    }
    c.require(exact, "exhaustive rows=10 sweep equals Binomial(10, 1/2) counts");
    c.note("boxes[5]=" + std::to_string(boxes[5]));
    return c;
}

Check criterion9_all_at_once() {
    Check c;
    const JointOutcomeTable pq = JointOutcomeTable::from_singlet(AngleTable::chsh_default());
    const SettingSource source = prng_source(kSeed);
    std::vector<TrialRecord> trials;
    trials.reserve(100000);
    for (std::uint64_t i = 0; i < 100000; ++i) {
        trials.push_back(run_all_at_once(pq, i, kSeed, source));
    }
    std::uint64_t well_formed = 0;
    for (const auto& t : trials) {
        const OnticState* lambda = t.snapshot(Stage::post_measurement);
        if (lambda != nullptr && lambda->values.size() == 2 &&
            lambda->defines(t.setting_a->observable()) &&
            lambda->defines(t.setting_b->observable())) {
            ++well_formed;
        }
    }
    c.require(well_formed == trials.size(),
              "lambda defined on exactly the measured observables in 100% of trials");
    const SIReport lambda0 =
        si_test(trials, Stage::preparation, LabelScheme::joint, Policy{});
    c.require(lambda0.verdict == Verdict::obeyed, "lambda0 stage OBEYED");
    const double fraction =
        counterfactual_definiteness_fraction(trials, Stage::post_measurement);
    c.require(fraction == 0.0, "counterfactual-definiteness audit reports 0");
    c.note("well-formed " + std::to_string(well_formed) + "/100000, audit " +
           fmt(fraction));
    return c;
}

Check criterion10_exceptionalist() {
    Check c;
    const JointOutcomeTable pq = JointOutcomeTable::from_singlet(AngleTable::chsh_default());
    const ExceptionalistRun run = run_exceptionalist(100000, kSeed, 0.3, pq);
    const Policy policy;
    const SIReport drug =
        si_test(run.drug.trials, Stage::preparation, LabelScheme::wing_a, policy);
    const SIReport bell =
        si_test(run.bell.trials, Stage::preparation, LabelScheme::joint, policy);
    c.require(drug.verdict == Verdict::obeyed, "drug arm OBEYED");
    c.require(bell.verdict == Verdict::violated, "Bell arm VIOLATED");
    c.note("drug " + verdict_name(drug.verdict) + ", bell " + verdict_name(bell.verdict));
    return c;
}

Check criterion11_reproducibility() {
    Check c;
    ExperimentConfig cfg;
    cfg.model_id = "zigzag";
    cfg.trials = 20000;
    cfg.seed = kSeed;
    cfg.angles = AngleTable::chsh_default();
    cfg.digest = config_digest_hex("acceptance-repro");
    const std::vector<std::string> names = {"trials.log", "report.json", "report.csv",
                                            "chsh.csv"};
    auto run_into = [&](const std::string& dir, unsigned workers) {
        fs::remove_all(dir);
        cfg.out_dir = dir;
        run_experiment(cfg, workers);
        std::vector<std::string> contents;
        for (const auto& name : names) contents.push_back(read_text_file(dir + "/" + name));
        return contents;
    };
    const auto first = run_into("acceptance-out/a", 1);
    const auto second = run_into("acceptance-out/b", 1);
    const auto eight = run_into("acceptance-out/c", 8);
    for (std::size_t i = 0; i < names.size(); ++i) {
        c.require(first[i] == second[i], names[i] + " identical across runs");
        c.require(first[i] == eight[i], names[i] + " identical for 1 vs 8 workers");
    }
    c.note("log/report/csv byte-identical across reruns and worker counts");
    fs::remove_all("acceptance-out");
    return c;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
        {"zigzag CHSH fidelity at N=1e5", criterion1_zigzag_chsh},
        {"zigzag per-stage SI verdicts", criterion2_zigzag_si},
        {"goblin-1 table construction oracle", criterion3_goblin_tables},
        {"goblin variants: quantum statistics with SI violation", criterion4_goblin_variants},
        {"local-HV baseline obeys SI within the CHSH bound", criterion5_local_hv},
        {"fluke suite (coins and entanglement)", criterion6_flukes},
        {"branch enumeration at n=20", criterion7_branches},
        {"Galton board paths and exhaustive sweep", criterion8_galton},
        {"all-at-once counterfactual indefiniteness", criterion9_all_at_once},
        {"exceptionalist shared-stream coexistence", criterion10_exceptionalist},
        {"byte-identical reproducibility", criterion11_reproducibility},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check result;
        try {
            result = criteria[i].second();
        } catch (const std::exception& ex) {
            result.ok = false;
            result.detail = std::string("exception: ") + ex.what();
        }
        if (!result.ok) ++failures;
        std::printf("%s  criterion %2zu  %s%s%s\n", result.ok ? "PASS" : "FAIL", i + 1,
                    criteria[i].first.c_str(), result.detail.empty() ? "" : " — ",
                    result.detail.c_str());
        std::fflush(stdout);
    }
    if (failures > 0) {
        std::printf("%d of %zu criteria failed\n", failures, criteria.size());
        return 1;
    }
    std::printf("all %zu criteria passed\n", criteria.size());
    return 0;
}
