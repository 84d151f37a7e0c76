#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "sibell/analysis.hpp"
#include "sibell/models.hpp"

using namespace sibell;

namespace {

constexpr double pi = std::numbers::pi;

TrialRecord token_trial(std::uint64_t index, const std::string& a_token,
                        const std::string& b_token, const OnticState& state) {
    TrialRecord t;
    t.trial_index = index;
    t.model_id = "test";
    t.setting_a = Setting{Wing::A, angle_from_degrees_text(a_token)};
    t.setting_b = Setting{Wing::B, angle_from_degrees_text(b_token)};
    t.outcomes = std::make_pair(Outcome::plus, Outcome::plus);
    t.add_snapshot(Stage::preparation, state);
    return t;
}

OnticState coin_state(Outcome c) {
    return OnticState::make_assignment({{ObservableId{Wing::A, 0.0}, c}});
}

FrequencyDistribution dist_from(const std::map<std::string, double>& m) {
    FrequencyDistribution d;
    for (const auto& [k, v] : m) d.add(k, v);
    return d;
}

SettingSource prng_source(std::uint64_t seed) {
    SettingSource s;
    s.kind = SourceKind::seeded_prng;
    s.seed = seed;
    s.table = AngleTable::chsh_default();
    return s;
}

}  // namespace

TEST_CASE("build_distribution counts tokens") {
    std::vector<TrialRecord> trials;
    trials.push_back(token_trial(0, "0", "0", coin_state(Outcome::plus)));
    trials.push_back(token_trial(1, "0", "0", coin_state(Outcome::plus)));
    trials.push_back(token_trial(2, "0", "0", coin_state(Outcome::minus)));
    trials.push_back(token_trial(3, "0", "0", coin_state(Outcome::minus)));
    const FrequencyDistribution d = build_distribution(trials, Stage::preparation);
    CHECK(d.total() == 4.0);
    CHECK(d.frequency("A0:+") == doctest::Approx(0.5));
    CHECK(d.frequency("A0:-") == doctest::Approx(0.5));

    CHECK_THROWS_WITH_AS(
        build_distribution(trials, Stage::preparation,
                           [](const TrialRecord&) { return false; }),
        doctest::Contains("empty ensemble"), std::runtime_error);
    CHECK_THROWS_WITH_AS(build_distribution(trials, Stage::post_measurement),
                         doctest::Contains("trial 0"), std::runtime_error);
}

TEST_CASE("tv distance basics") {
    const auto p = dist_from({{"h", 1.0}});
    const auto q = dist_from({{"h", 0.5}, {"t", 0.5}});
    const auto r = dist_from({{"x", 2.0}, {"y", 6.0}});
    CHECK(tv_distance(p, p) == 0.0);
    CHECK(tv_distance(p, r) == 1.0);  // disjoint supports
    CHECK(tv_distance(p, q) == 0.5);
    CHECK(tv_distance(q, p) == 0.5);
}

TEST_CASE("tv distance is a metric on random distributions") {
    std::mt19937_64 gen(2024);
    std::uniform_int_distribution<int> n_tokens(1, 6);
    std::uniform_real_distribution<double> weight(0.0, 1.0);
    auto random_dist = [&]() {
        FrequencyDistribution d;
        const int n = n_tokens(gen);
        for (int i = 0; i < n; ++i) {
            d.add("t" + std::to_string(i), weight(gen) + 1e-3);
        }
        return d;
    };
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_dist();
        const auto b = random_dist();
        const auto c = random_dist();
        const double ab = tv_distance(a, b);
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0 + 1e-12);
        CHECK(ab == doctest::Approx(tv_distance(b, a)).epsilon(1e-12));
        CHECK(tv_distance(a, a) == 0.0);
        CHECK(ab <= tv_distance(a, c) + tv_distance(c, b) + 1e-12);
    }
}

TEST_CASE("si_test needs two labels") {
    std::vector<TrialRecord> trials;
    trials.push_back(token_trial(0, "0", "0", coin_state(Outcome::plus)));
    trials.push_back(token_trial(1, "0", "0", coin_state(Outcome::minus)));
    CHECK_THROWS(si_test(trials, Stage::preparation, LabelScheme::joint, Policy{}));
}

TEST_CASE("local-hv baseline obeys SI; goblin-1 violates with table-exact TVs") {
    const AngleTable table = AngleTable::chsh_default();
    const JointOutcomeTable pq = JointOutcomeTable::from_singlet(table);
    const GoblinTables g = derive_goblin1_tables(table, pq);
    const SettingSource source = prng_source(40);
    const int n = 40000;

    std::vector<TrialRecord> base, goblin;
    for (int i = 0; i < n; ++i) {
        base.push_back(run_local_hv(i, 40, source));
        goblin.push_back(run_goblin1(g, i, 40));
    }
    const SIReport obeyed = si_test(base, Stage::preparation, LabelScheme::joint, Policy{});
    CHECK(obeyed.verdict == Verdict::obeyed);

    const SIReport violated =
        si_test(goblin, Stage::preparation, LabelScheme::joint, Policy{});
    CHECK(violated.verdict == Verdict::violated);
    // oracle: exact conditionals rho(lambda|X,Y) from the tables
    for (const auto& row : violated.per_label) {
        auto parsed = table.parse_joint_token(row.label);
        REQUIRE(parsed.has_value());
        const int joint = 2 * parsed->first + parsed->second;
        FrequencyDistribution exact_conditional, exact_pooled;
        for (int l = 0; l < kLambdaCount; ++l) {
            const std::string token =
                canonical_encoding(total_assignment_state(table, l));
            exact_conditional.add(token, g.lambda_prior[l] * g.setting_weights[l][joint] / 0.25);
            exact_pooled.add(token, g.lambda_prior[l]);
        }
        const double expected_tv = tv_distance(exact_conditional, exact_pooled);
        CHECK(std::abs(row.tv - expected_tv) < 0.02);
        CHECK(row.violated);
    }
}

TEST_CASE("zigzag stage verdicts at moderate N") {
    const SettingSource source = prng_source(41);
    std::vector<TrialRecord> trials;
    for (int i = 0; i < 30000; ++i) trials.push_back(run_zigzag(i, 41, source));

    const SIReport temporal =
        si_test(trials, Stage::source_temporal, LabelScheme::wing_a, Policy{});
    CHECK(temporal.verdict == Verdict::violated);
    for (const auto& row : temporal.per_label) {
        CHECK(row.tv == doctest::Approx(0.5).epsilon(0.05));
    }

    const SIReport step1 =
        si_test(trials, Stage::causal_step_1, LabelScheme::wing_a, Policy{});
    CHECK(step1.verdict == Verdict::obeyed);
    CHECK(step1.ensemble_distribution.support_size() == 1);
    CHECK(step1.ensemble_distribution.frequency("Q:mixed") == doctest::Approx(1.0));

    const SIReport step3 =
        si_test(trials, Stage::causal_step_3, LabelScheme::wing_b, Policy{});
    CHECK(step3.verdict == Verdict::obeyed);
}

TEST_CASE("labels under n_min give INCONCLUSIVE unless something violates") {
    std::vector<TrialRecord> trials;
    for (int i = 0; i < 40; ++i) {
        const std::string a = i % 2 == 0 ? "0" : "45";
        trials.push_back(token_trial(i, a, "22.5",
                                     coin_state(i % 3 == 0 ? Outcome::plus : Outcome::minus)));
    }
    Policy policy;  // n_min = 1000 >> 20 per label
    const SIReport report = si_test(trials, Stage::preparation, LabelScheme::wing_a, policy);
    CHECK(report.verdict == Verdict::inconclusive);
}

TEST_CASE("verdict is invariant under relabeling of Z tokens") {
    // identical grouping structure, different label names (setting angles)
    auto build = [](const std::string& a0, const std::string& a1) {
        std::vector<TrialRecord> trials;
        for (int i = 0; i < 6000; ++i) {
            const bool first_group = i % 2 == 0;
            // group determines the lambda distribution: a clear violation
            const Outcome c = first_group ? Outcome::plus : Outcome::minus;
            trials.push_back(token_trial(i, first_group ? a0 : a1, "22.5", coin_state(c)));
        }
        return trials;
    };
    const SIReport r1 = si_test(build("0", "45"), Stage::preparation,
                                LabelScheme::wing_a, Policy{});
    const SIReport r2 = si_test(build("22.5", "157.5"), Stage::preparation,
                                LabelScheme::wing_a, Policy{});
    CHECK(r1.verdict == Verdict::violated);
    CHECK(r1.verdict == r2.verdict);
    REQUIRE(r1.per_label.size() == r2.per_label.size());
    for (std::size_t i = 0; i < r1.per_label.size(); ++i) {
        CHECK(r1.per_label[i].tv == doctest::Approx(r2.per_label[i].tv).epsilon(1e-12));
        CHECK(r1.per_label[i].n == r2.per_label[i].n);
    }
}

TEST_CASE("verdict is invariant under trial order permutation") {
    const AngleTable table = AngleTable::chsh_default();
    const JointOutcomeTable pq = JointOutcomeTable::from_singlet(table);
    const SettingSource source = prng_source(42);
    std::vector<TrialRecord> trials;
    for (int i = 0; i < 8000; ++i) trials.push_back(run_goblin2(pq, i, 42, source));
    const SIReport before = si_test(trials, Stage::preparation, LabelScheme::joint, Policy{});
    std::mt19937_64 gen(7);
    std::shuffle(trials.begin(), trials.end(), gen);
    const SIReport after = si_test(trials, Stage::preparation, LabelScheme::joint, Policy{});
    CHECK(before.verdict == after.verdict);
    REQUIRE(before.per_label.size() == after.per_label.size());
    for (std::size_t i = 0; i < before.per_label.size(); ++i) {
        CHECK(before.per_label[i].label == after.per_label[i].label);
        CHECK(before.per_label[i].tv == doctest::Approx(after.per_label[i].tv));
        CHECK(before.per_label[i].n == after.per_label[i].n);
    }
}

TEST_CASE("sense-2: forced all-heads vs Bernoulli(1/2) has TV exactly 0.5") {
    const Ensemble forced = run_fluke_coin(100000, 11, FlukeCondition::force_all_heads);
    const auto theory = FrequencyDistribution::from_probabilities(coin_theory_probabilities());
    const SIReport report =
        si_test_theory(forced.trials, Stage::preparation, theory, Policy{});
    CHECK(report.verdict == Verdict::violated);
    REQUIRE(report.per_label.size() == 1);
    CHECK(report.per_label[0].tv == 0.5);  // exact
    CHECK(report.per_label[0].p < 1e-10);
}

TEST_CASE("sense-2: unconditioned fair coins obey") {
    const Ensemble fair = run_fluke_coin(100000, 12, FlukeCondition::none);
    const auto theory = FrequencyDistribution::from_probabilities(coin_theory_probabilities());
    const SIReport report = si_test_theory(fair.trials, Stage::preparation, theory, Policy{});
    CHECK(report.verdict == Verdict::obeyed);
}

TEST_CASE("sense-2: tokens outside theory support force VIOLATED") {
    std::vector<TrialRecord> trials;
    for (int i = 0; i < 2000; ++i) {
        trials.push_back(token_trial(i, "0", "0", coin_state(Outcome::plus)));
    }
    const auto theory =
        FrequencyDistribution::from_probabilities({{"A0:-", 0.5}, {"B0:+", 0.5}});
    const SIReport report = si_test_theory(trials, Stage::preparation, theory, Policy{});
    CHECK(report.verdict == Verdict::violated);
    REQUIRE(!report.notes.empty());
    CHECK(report.notes[0].find("outside theory support") != std::string::npos);
}

TEST_CASE("sense-2: post-selected entanglement fluke vs the analytic mixture") {
    const JointOutcomeTable pq = JointOutcomeTable::from_singlet(AngleTable::chsh_default());
    const Ensemble kept =
        run_fluke_entanglement(60000, 13, FlukeCondition::post_select_obeyed, pq);
    const auto mixture = FrequencyDistribution::from_probabilities(
        entanglement_mixture_probabilities(pq));
    const SIReport vs_mixture =
        si_test_theory(kept.trials, Stage::preparation, mixture, Policy{});
    CHECK(vs_mixture.verdict == Verdict::violated);
    // analytic TV between quantum-only ensemble and the half/half mixture
    const auto quantum_only = FrequencyDistribution::from_probabilities(
        entanglement_quantum_probabilities(pq));
    const double expected_tv = tv_distance(quantum_only, mixture);
    CHECK(expected_tv == doctest::Approx(0.17677669529663687).epsilon(1e-9));
    CHECK(vs_mixture.per_label[0].tv == doctest::Approx(expected_tv).epsilon(0.05));

    const SIReport vs_quantum =
        si_test_theory(kept.trials, Stage::preparation, quantum_only, Policy{});
    CHECK(vs_quantum.verdict == Verdict::obeyed);
}

TEST_CASE("chsh on exact correlators reproduces the analytic S") {
    const AngleTable table = AngleTable::chsh_default();
    std::array<std::array<double, 2>, 2> e{};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            e[i][j] = exact_correlator(table.wing_a[i], table.wing_b[j]);
        }
    }
    const CHSHEstimate est = chsh_from_correlators(e);
    CHECK(std::abs(est.s - (-2.0 * std::sqrt(2.0))) < 1e-12);
    CHECK(std::abs(std::abs(est.s) - 2.8284271247461903) < 1e-12);
}

TEST_CASE("chsh handles the degenerate all-equal-angle identity") {
    // all four angles equal: S = E - E + E + E = 2E, so |S| <= 2
    std::array<std::array<double, 2>, 2> e{};
    const double corr = exact_correlator(0.4, 0.4);
    for (auto& row : e) row.fill(corr);
    const CHSHEstimate est = chsh_from_correlators(e);
    CHECK(est.s == doctest::Approx(2.0 * corr).epsilon(1e-12));
    CHECK(std::abs(est.s) <= 2.0 + 1e-12);
}

TEST_CASE("empirical chsh: zigzag near -2*sqrt(2), local-hv within the bound") {
    const AngleTable table = AngleTable::chsh_default();
    const SettingSource source = prng_source(43);
    std::vector<TrialRecord> zz, hv;
    for (int i = 0; i < 30000; ++i) {
        zz.push_back(run_zigzag(i, 43, source));
        hv.push_back(run_local_hv(i, 43, source));
    }
    const CHSHEstimate zz_est = chsh(zz, table);
    CHECK(std::abs(zz_est.s - (-2.8284271247461903)) < 0.1);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            CHECK(std::abs(zz_est.cell[i][j].e) <= 1.0);
            CHECK(zz_est.cell[i][j].n > 0);
        }
    }
    CHECK(std::abs(zz_est.s) <= 4.0);

    const CHSHEstimate hv_est = chsh(hv, table);
    CHECK(std::abs(hv_est.s) < 2.05);

    // exact enumerated local-hv S
    std::array<double, kLambdaCount> uniform{};
    uniform.fill(1.0 / kLambdaCount);
    const CHSHEstimate exact = chsh_from_correlators(lambda_prior_correlators(uniform));
    CHECK(std::abs(exact.s) <= 2.0 + 1e-12);
}

TEST_CASE("chsh errors on a missing setting cell") {
    const AngleTable table = AngleTable::chsh_default();
    std::vector<TrialRecord> trials;
    trials.push_back(token_trial(0, "0", "22.5", coin_state(Outcome::plus)));
    CHECK_THROWS_WITH_AS(chsh(trials, table), doctest::Contains("no trials"),
                         std::runtime_error);
}

TEST_CASE("report serialization has stable keys and parses back") {
    const Ensemble fair = run_fluke_coin(5000, 3, FlukeCondition::none);
    const auto theory = FrequencyDistribution::from_probabilities(coin_theory_probabilities());
    const SIReport report = si_test_theory(fair.trials, Stage::preparation, theory, Policy{});
    const std::string json_text = si_report_to_json(report);
    const auto parsed = nlohmann::json::parse(json_text);
    CHECK(parsed["stage"] == "preparation");
    CHECK(parsed["sense"] == "theory-relative");
    CHECK(parsed["verdict"] == "OBEYED");
    CHECK(parsed["policy"]["alpha"] == 1e-3);
    CHECK(parsed["labels"].size() == 1);
    // stable key order
    CHECK(json_text.find("\"stage\"") < json_text.find("\"label_scheme\""));
    CHECK(json_text.find("\"label_scheme\"") < json_text.find("\"verdict\""));

    const std::string csv = si_report_csv_rows(report);
    CHECK(csv.find("theory-relative,preparation,ensemble,ensemble,5000,") == 0);

    const CHSHEstimate est = chsh_from_correlators({{{0.5, -0.5}, {0.5, 0.5}}});
    const std::string chsh_json_text = chsh_to_json(est, AngleTable::chsh_default());
    const auto chsh_parsed = nlohmann::json::parse(chsh_json_text);
    CHECK(chsh_parsed["correlators"].size() == 4);
    CHECK(chsh_parsed["s"] == 2.0);
    const std::string chsh_csv = chsh_csv_rows(est, AngleTable::chsh_default());
    CHECK(std::count(chsh_csv.begin(), chsh_csv.end(), '\n') == 5);  // 4 E rows + S
}

TEST_CASE("chi-square merges sparse cells") {
    FrequencyDistribution observed;
    observed.add("a", 600);
    observed.add("b", 396);
    observed.add("c", 2);
    observed.add("d", 2);
    FrequencyDistribution reference;
    reference.add("a", 0.6);
    reference.add("b", 0.396);
    reference.add("c", 0.002);
    reference.add("d", 0.002);
    const GofResult gof = chi_square_gof(observed, reference);
    // c and d pool into one cell: 3 cells total, 2 dof
    CHECK(gof.dof == 2);
    CHECK(gof.p > 0.99);
}
