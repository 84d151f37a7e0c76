#include "sibell/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sibell {

namespace {

void require_two_by_two(const AngleTable& table, const char* who) {
    if (!table.is_two_by_two()) {
        throw std::invalid_argument(std::string(who) + " requires a 2x2 angle table");
    }
}

// sample index from cumulative weights in fixed order
template <std::size_t N>
int sample_index(const std::array<double, N>& weights, double u) {
    double c = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        c += weights[i];
        if (u < c) return static_cast<int>(i);
    }
    for (std::size_t i = N; i-- > 0;) {
        if (weights[i] > 0.0) return static_cast<int>(i);
    }
    throw std::logic_error("sample_index: all weights zero");
}

std::pair<Outcome, Outcome> sample_joint_outcome(const JointOutcomeTable& quantum,
                                                 int index_a, int index_b, double u) {
    std::array<double, 4> cells{};
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            cells[2 * a + b] = quantum.p[2 * index_a + index_b][a][b];
        }
    }
    const int cell = sample_index(cells, u);
    return {outcome_from_slot(cell / 2), outcome_from_slot(cell % 2)};
}

void add_excluded_setting_flags(TrialRecord& trial, const AngleTable& table,
                                int index_a, int index_b) {
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            if (i == index_a && j == index_b) continue;
            trial.flags.insert("excluded:" + table.joint_token(i, j));
        }
    }
}

}  // namespace

std::string causal_structure_name(CausalStructure s) {
    switch (s) {
        case CausalStructure::local_hv: return "local-hv";
        case CausalStructure::goblin_1: return "goblin-1 (lambda->G->X)";
        case CausalStructure::goblin_2: return "goblin-2 (lambda<-G->X)";
        case CausalStructure::goblin_3: return "goblin-3 (X->G->lambda)";
        case CausalStructure::zigzag: return "zigzag";
        case CausalStructure::fluke: return "fluke";
        case CausalStructure::branching: return "branching";
        case CausalStructure::galton: return "galton";
        case CausalStructure::all_at_once: return "all-at-once";
        case CausalStructure::exceptionalist: return "exceptionalist";
    }
    throw std::logic_error("unreachable causal structure");
}

const std::vector<ModelInfo>& model_catalog() {
    static const std::vector<ModelInfo> catalog = {
        {"local-hv", CausalStructure::local_hv, {Stage::preparation}},
        {"goblin-1", CausalStructure::goblin_1, {Stage::preparation}},
        {"goblin-2", CausalStructure::goblin_2, {Stage::preparation}},
        {"goblin-3", CausalStructure::goblin_3, {Stage::preparation}},
        {"zigzag",
         CausalStructure::zigzag,
         {Stage::source_temporal, Stage::causal_step_1, Stage::causal_step_3}},
        {"all-at-once",
         CausalStructure::all_at_once,
         {Stage::preparation, Stage::post_measurement}},
        {"fluke-coin", CausalStructure::fluke, {Stage::preparation}},
        {"fluke-entanglement", CausalStructure::fluke, {Stage::preparation}},
        {"exceptionalist-drug", CausalStructure::exceptionalist, {Stage::preparation}},
        {"exceptionalist-bell", CausalStructure::exceptionalist, {Stage::preparation}},
        {"branching", CausalStructure::branching, {}},
        {"galton", CausalStructure::galton, {}},
    };
    return catalog;
}

const ModelInfo* model_info(const std::string& model_id) {
    for (const auto& info : model_catalog()) {
        if (info.model_id == model_id) return &info;
    }
    return nullptr;
}

JointOutcomeTable JointOutcomeTable::from_singlet(const AngleTable& table,
                                                  bool correlated_pairs) {
    require_two_by_two(table, "JointOutcomeTable");
    JointOutcomeTable out;
    out.table = table;
    const TwoQubitState singlet = make_singlet();
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    Outcome ob = outcome_from_slot(b);
                    // the toggle relabels wing-B outcomes
                    Outcome raw_b = correlated_pairs ? outcome_flip(ob) : ob;
                    out.p[2 * i + j][a][b] = joint_outcome_probability(
                        singlet, table.wing_a[i], outcome_from_slot(a), table.wing_b[j],
                        raw_b);
                }
            }
        }
    }
    return out;
}

double JointOutcomeTable::prob(int index_a, int index_b, Outcome a, Outcome b) const {
    return p[2 * index_a + index_b][outcome_slot(a)][outcome_slot(b)];
}

Outcome lambda_component(int lambda_index, int slot) {
    return (lambda_index >> slot) & 1 ? Outcome::plus : Outcome::minus;
}

OnticState total_assignment_state(const AngleTable& table, int lambda_index) {
    require_two_by_two(table, "total_assignment_state");
    std::vector<std::pair<ObservableId, Outcome>> entries;
    entries.reserve(4);
    for (int i = 0; i < 2; ++i) {
        entries.emplace_back(ObservableId{Wing::A, table.wing_a[i]},
                             lambda_component(lambda_index, i));
    }
    for (int j = 0; j < 2; ++j) {
        entries.emplace_back(ObservableId{Wing::B, table.wing_b[j]},
                             lambda_component(lambda_index, 2 + j));
    }
    return OnticState::make_assignment(std::move(entries));
}

OnticState partial_assignment_state(const Setting& sa, Outcome a, const Setting& sb,
                                    Outcome b) {
    return OnticState::make_assignment(
        {{sa.observable(), a}, {sb.observable(), b}});
}

GoblinTables derive_goblin1_tables(const AngleTable& table,
                                   const JointOutcomeTable& quantum) {
    require_two_by_two(table, "derive_goblin1_tables");
    for (int joint = 0; joint < 4; ++joint) {
        double sum = 0.0;
        for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
                const double p = quantum.p[joint][a][b];
                if (p < 0.0) throw std::invalid_argument("P_Q has a negative cell");
                sum += p;
            }
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw std::invalid_argument("P_Q cells must sum to 1 per joint setting");
        }
    }
    GoblinTables out;
    out.table = table;
    // joint = 2*i + j, lambda slots: (a0, a1, b0, b1)
    std::array<std::array<double, 4>, kLambdaCount> joint_prob{};
    for (int lambda = 0; lambda < kLambdaCount; ++lambda) {
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                const Outcome a = lambda_component(lambda, i);
                const Outcome b = lambda_component(lambda, 2 + j);
                // 1/4 settings * 1/4 for the two unconstrained components
                joint_prob[lambda][2 * i + j] =
                    0.25 * quantum.prob(i, j, a, b) * 0.25;
            }
        }
    }
    for (int lambda = 0; lambda < kLambdaCount; ++lambda) {
        double q = 0.0;
        for (int joint = 0; joint < 4; ++joint) q += joint_prob[lambda][joint];
        out.lambda_prior[lambda] = q;
        for (int joint = 0; joint < 4; ++joint) {
            out.setting_weights[lambda][joint] =
                q > 0.0 ? joint_prob[lambda][joint] / q : 0.0;
        }
    }
    return out;
}

TrialRecord run_local_hv(std::uint64_t trial_index, std::uint64_t seed,
                         const SettingSource& source) {
    require_two_by_two(source.table, "run_local_hv");
    RandomStream lambda_stream(seed, trial_index, "lambda");
    const int lambda = std::min(kLambdaCount - 1,
                                static_cast<int>(lambda_stream.next() * kLambdaCount));
    auto [draw, _] = next_joint_setting(source.at(trial_index));
    TrialRecord t;
    t.trial_index = trial_index;
    t.model_id = "local-hv";
    t.setting_a = draw.setting_a;
    t.setting_b = draw.setting_b;
    t.outcomes = std::make_pair(lambda_component(lambda, draw.index_a),
                                lambda_component(lambda, 2 + draw.index_b));
    t.add_snapshot(Stage::preparation, total_assignment_state(source.table, lambda));
    return t;
}

TrialRecord run_goblin1(const GoblinTables& tables, std::uint64_t trial_index,
                        std::uint64_t seed) {
    RandomStream lambda_stream(seed, trial_index, "goblin-lambda");
    RandomStream setting_stream(seed, trial_index, "goblin-setting");
    const int lambda = sample_index(tables.lambda_prior, lambda_stream.next());
    const int joint = sample_index(tables.setting_weights[lambda], setting_stream.next());
    const int index_a = joint / 2, index_b = joint % 2;
    TrialRecord t;
    t.trial_index = trial_index;
    t.model_id = "goblin-1";
    t.setting_a = tables.table.setting(Wing::A, index_a);
    t.setting_b = tables.table.setting(Wing::B, index_b);
    t.outcomes = std::make_pair(lambda_component(lambda, index_a),
                                lambda_component(lambda, 2 + index_b));
    t.add_snapshot(Stage::preparation, total_assignment_state(tables.table, lambda));
    return t;
}

TrialRecord run_goblin2_at(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                           std::uint64_t seed, int index_a, int index_b,
                           const std::string& model_id, bool debug_excluded) {
    RandomStream outcome_stream(seed, trial_index, "goblin-outcome");
    auto [a, b] = sample_joint_outcome(quantum, index_a, index_b, outcome_stream.next());
    TrialRecord t;
    t.trial_index = trial_index;
    t.model_id = model_id;
    t.setting_a = quantum.table.setting(Wing::A, index_a);
    t.setting_b = quantum.table.setting(Wing::B, index_b);
    t.outcomes = std::make_pair(a, b);
    t.add_snapshot(Stage::preparation,
                   partial_assignment_state(*t.setting_a, a, *t.setting_b, b));
    if (debug_excluded) add_excluded_setting_flags(t, quantum.table, index_a, index_b);
    return t;
}

TrialRecord run_goblin2(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                        std::uint64_t seed, const SettingSource& source,
                        bool debug_excluded) {
    auto [draw, _] = next_joint_setting(source.at(trial_index));
    TrialRecord t = run_goblin2_at(quantum, trial_index, seed, draw.index_a, draw.index_b,
                                   "goblin-2", debug_excluded);
    return t;
}

TrialRecord run_goblin3(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                        std::uint64_t seed, bool debug_excluded) {
    SettingSource source;
    source.kind = SourceKind::deterministic_counter;
    source.seed = seed;
    source.table = quantum.table;
    auto [draw, _] = next_joint_setting(source.at(trial_index));
    TrialRecord t = run_goblin2_at(quantum, trial_index, seed, draw.index_a, draw.index_b,
                                   "goblin-3", debug_excluded);
    return t;
}

TrialRecord run_goblin(int variant, const GoblinTables& tables,
                       const JointOutcomeTable& quantum, std::uint64_t trial_index,
                       std::uint64_t seed, const SettingSource& source,
                       bool debug_excluded) {
    switch (variant) {
        case 1: return run_goblin1(tables, trial_index, seed);
        case 2: return run_goblin2(quantum, trial_index, seed, source, debug_excluded);
        case 3: return run_goblin3(quantum, trial_index, seed, debug_excluded);
        default: throw std::invalid_argument("goblin variant must be 1, 2 or 3");
    }
}

TrialRecord run_zigzag(std::uint64_t trial_index, std::uint64_t seed,
                       const SettingSource& source, bool correlated_pairs) {
    auto [draw, _] = next_joint_setting(source.at(trial_index));
    const TwoQubitState singlet = make_singlet();
    const DensityMatrix rho1 = reduce_first(singlet);

    RandomStream alice_stream(seed, trial_index, "alice-born");
    const BornDraw alice = born_sample(rho1, draw.setting_a.angle, alice_stream.next());

    const QubitState phi = partner_state(singlet, draw.setting_a.angle, alice.outcome);

    RandomStream bob_stream(seed, trial_index, "bob-born");
    const BornDraw bob = born_sample(phi, draw.setting_b.angle, bob_stream.next());

    QuantumPart lambda1;
    lambda1.mixed = true;
    QuantumPart lambda2;
    lambda2.mixed = false;
    lambda2.basis_angle = canonicalize_angle(draw.setting_a.angle);
    lambda2.eig = outcome_flip(alice.outcome);  // singlet partner is the opposite eigenstate
    lambda2.a0 = phi.a0;
    lambda2.a1 = phi.a1;

    TrialRecord t;
    t.trial_index = trial_index;
    t.model_id = "zigzag";
    t.setting_a = draw.setting_a;
    t.setting_b = draw.setting_b;
    t.outcomes = std::make_pair(alice.outcome, correlated_pairs
                                                   ? outcome_flip(bob.outcome)
                                                   : bob.outcome);
    t.add_snapshot(Stage::causal_step_1, OnticState::make_quantum({lambda1}));
    t.add_snapshot(Stage::source_temporal, OnticState::make_quantum({lambda1, lambda2}));
    t.add_snapshot(Stage::causal_step_3, OnticState::make_quantum({lambda1, lambda2}));
    return t;
}

TrialRecord run_all_at_once(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                            std::uint64_t seed, const SettingSource& source) {
    auto [draw, _] = next_joint_setting(source.at(trial_index));
    RandomStream outcome_stream(seed, trial_index, "joint-outcome");
    // one deliberately nonlocal draw over both wings
    auto [a, b] = sample_joint_outcome(quantum, draw.index_a, draw.index_b,
                                       outcome_stream.next());
    TrialRecord t;
    t.trial_index = trial_index;
    t.model_id = "all-at-once";
    t.setting_a = draw.setting_a;
    t.setting_b = draw.setting_b;
    t.outcomes = std::make_pair(a, b);
    t.add_snapshot(Stage::preparation, OnticState::make_empty());
    t.add_snapshot(Stage::post_measurement,
                   partial_assignment_state(draw.setting_a, a, draw.setting_b, b));
    return t;
}

std::string fluke_condition_name(FlukeCondition c) {
    switch (c) {
        case FlukeCondition::none: return "none";
        case FlukeCondition::post_select_obeyed: return "post-select-obeyed";
        case FlukeCondition::force_all_heads: return "force-all-heads";
    }
    throw std::logic_error("unreachable fluke condition");
}

FlukeCondition fluke_condition_from_name(const std::string& name) {
    if (name == "none") return FlukeCondition::none;
    if (name == "post-select-obeyed") return FlukeCondition::post_select_obeyed;
    if (name == "force-all-heads") return FlukeCondition::force_all_heads;
    throw std::invalid_argument("unknown fluke condition '" + name + "'");
}

namespace {

ObservableId coin_observable() { return ObservableId{Wing::A, 0.0}; }

}  // namespace

Ensemble run_fluke_coin(std::uint64_t n_trials, std::uint64_t seed,
                        FlukeCondition condition) {
    if (n_trials < 1) throw std::invalid_argument("n_trials must be >= 1");
    if (condition == FlukeCondition::post_select_obeyed) {
        throw std::invalid_argument("post-select-obeyed applies to the entanglement fluke");
    }
    Ensemble e;
    e.meta.model_id = "fluke-coin";
    e.meta.seed = seed;
    e.trials.reserve(n_trials);
    const Setting sa{Wing::A, 0.0};
    const Setting sb{Wing::B, 0.0};
    for (std::uint64_t i = 0; i < n_trials; ++i) {
        RandomStream coin_stream(seed, i, "coin");
        const bool heads =
            condition == FlukeCondition::force_all_heads || coin_stream.next() < 0.5;
        const Outcome c = heads ? Outcome::plus : Outcome::minus;
        TrialRecord t;
        t.trial_index = i;
        t.model_id = e.meta.model_id;
        t.setting_a = sa;
        t.setting_b = sb;
        t.outcomes = std::make_pair(c, c);
        t.add_snapshot(Stage::preparation,
                       OnticState::make_assignment({{coin_observable(), c}}));
        if (condition == FlukeCondition::force_all_heads) t.flags.insert("fluke-branch");
        e.trials.push_back(std::move(t));
    }
    e.meta.trial_count = e.trials.size();
    return e;
}

Ensemble run_fluke_entanglement(std::uint64_t n_trials, std::uint64_t seed,
                                FlukeCondition condition,
                                const JointOutcomeTable& quantum) {
    if (n_trials < 1) throw std::invalid_argument("n_trials must be >= 1");
    if (condition == FlukeCondition::force_all_heads) {
        throw std::invalid_argument("force-all-heads applies to the coin fluke");
    }
    SettingSource source;
    source.kind = SourceKind::seeded_prng;
    source.seed = seed;
    source.table = quantum.table;

    Ensemble e;
    e.meta.model_id = "fluke-entanglement";
    e.meta.seed = seed;
    e.trials.reserve(n_trials);
    for (std::uint64_t i = 0; i < n_trials; ++i) {
        auto [draw, _] = next_joint_setting(source.at(i));
        RandomStream branch_stream(seed, i, "branch");
        const bool obey = branch_stream.next() < 0.5;
        Outcome a, b;
        if (obey) {
            RandomStream outcome_stream(seed, i, "joint-outcome");
            std::tie(a, b) = sample_joint_outcome(quantum, draw.index_a, draw.index_b,
                                                  outcome_stream.next());
        } else {
            RandomStream na(seed, i, "noise-a");
            RandomStream nb(seed, i, "noise-b");
            a = na.next() < 0.5 ? Outcome::plus : Outcome::minus;
            b = nb.next() < 0.5 ? Outcome::plus : Outcome::minus;
        }
        if (condition == FlukeCondition::post_select_obeyed && !obey) continue;
        TrialRecord t;
        t.trial_index = i;
        t.model_id = e.meta.model_id;
        t.setting_a = draw.setting_a;
        t.setting_b = draw.setting_b;
        t.outcomes = std::make_pair(a, b);
        t.add_snapshot(Stage::preparation,
                       partial_assignment_state(draw.setting_a, a, draw.setting_b, b));
        if (obey) t.flags.insert("correlation-obeyed");
        e.trials.push_back(std::move(t));
    }
    if (e.trials.empty()) {
        throw std::runtime_error("post-selection yielded an empty ensemble");
    }
    e.meta.trial_count = e.trials.size();
    return e;
}

std::map<std::string, double> coin_theory_probabilities() {
    std::map<std::string, double> out;
    for (Outcome c : {Outcome::plus, Outcome::minus}) {
        out[canonical_encoding(OnticState::make_assignment({{coin_observable(), c}}))] = 0.5;
    }
    return out;
}

namespace {

std::map<std::string, double> entanglement_token_probabilities(
    const JointOutcomeTable& quantum, bool mix_with_noise) {
    std::map<std::string, double> out;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const Setting sa = quantum.table.setting(Wing::A, i);
            const Setting sb = quantum.table.setting(Wing::B, j);
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    const Outcome oa = outcome_from_slot(a);
                    const Outcome ob = outcome_from_slot(b);
                    const double pq = quantum.prob(i, j, oa, ob);
                    const double p = mix_with_noise ? 0.5 * pq + 0.5 * 0.25 : pq;
                    const std::string token = canonical_encoding(
                        partial_assignment_state(sa, oa, sb, ob));
                    out[token] += 0.25 * p;
                }
            }
        }
    }
    return out;
}

}  // namespace

std::map<std::string, double> entanglement_mixture_probabilities(
    const JointOutcomeTable& quantum) {
    return entanglement_token_probabilities(quantum, true);
}

std::map<std::string, double> entanglement_quantum_probabilities(
    const JointOutcomeTable& quantum) {
    return entanglement_token_probabilities(quantum, false);
}

namespace {

void check_branch_flips(int n) {
    if (n < 1 || n > kMaxBranchFlips) {
        throw std::invalid_argument("branch flips must lie in [1, " +
                                    std::to_string(kMaxBranchFlips) + "]");
    }
}

}  // namespace

std::vector<Branch> enumerate_branches(int n) {
    check_branch_flips(n);
    std::vector<Branch> out;
    out.reserve(std::size_t{1} << n);
    for (std::uint32_t bits = 0; bits < (std::uint32_t{1} << n); ++bits) {
        out.push_back(Branch{bits, std::popcount(bits)});
    }
    return out;
}

double branch_weight(int n) {
    check_branch_flips(n);
    return std::ldexp(1.0, -n);
}

bool is_fluke_branch(int heads, int n, double epsilon) {
    return std::abs(static_cast<double>(heads) / n - 0.5) > epsilon;
}

std::vector<double> branch_heads_weights(int n) {
    check_branch_flips(n);
    std::vector<std::uint64_t> counts(n + 1, 0);
    for (std::uint32_t bits = 0; bits < (std::uint32_t{1} << n); ++bits) {
        ++counts[std::popcount(bits)];
    }
    const double w = branch_weight(n);
    std::vector<double> out(n + 1, 0.0);
    for (int h = 0; h <= n; ++h) out[h] = static_cast<double>(counts[h]) * w;
    return out;
}

double fluke_branch_weight(int n, double epsilon) {
    const std::vector<double> weights = branch_heads_weights(n);
    double total = 0.0;
    for (int h = 0; h <= n; ++h) {
        if (is_fluke_branch(h, n, epsilon)) total += weights[h];
    }
    return total;
}

int run_galton_single(int rows, const std::vector<int>& initial_condition) {
    if (rows < 1) throw std::invalid_argument("rows must be >= 1");
    if (static_cast<int>(initial_condition.size()) != rows) {
        throw std::invalid_argument("initial condition length must equal rows");
    }
    int box = 0;
    for (int bit : initial_condition) {
        if (bit != 0 && bit != 1) throw std::invalid_argument("bounce bits must be 0 or 1");
        box += bit;
    }
    return box;
}

std::vector<int> galton_ic_from_text(const std::string& bits) {
    std::vector<int> out;
    out.reserve(bits.size());
    for (char c : bits) {
        if (c != '0' && c != '1') {
            throw std::invalid_argument("initial condition must be a 0/1 string");
        }
        out.push_back(c - '0');
    }
    return out;
}

std::vector<std::uint64_t> galton_sweep_exhaustive(int rows) {
    if (rows < 1 || rows > 24) {
        throw std::invalid_argument("exhaustive sweep supports rows in [1, 24]");
    }
    std::vector<std::uint64_t> boxes(rows + 1, 0);
    for (std::uint32_t ic = 0; ic < (std::uint32_t{1} << rows); ++ic) {
        ++boxes[std::popcount(ic)];
    }
    return boxes;
}

std::vector<std::uint64_t> galton_sweep_sampled(int rows, std::uint64_t samples,
                                                std::uint64_t seed) {
    if (rows < 1 || rows > 64) throw std::invalid_argument("rows must lie in [1, 64]");
    if (samples < 1) throw std::invalid_argument("samples must be >= 1");
    std::vector<std::uint64_t> boxes(rows + 1, 0);
    for (std::uint64_t k = 0; k < samples; ++k) {
        RandomStream stream(seed, k, "galton");
        int box = 0;
        for (int r = 0; r < rows; ++r) {
            if (stream.next() >= 0.5) ++box;
        }
        ++boxes[box];
    }
    return boxes;
}

ObservableId drug_responder_observable() { return ObservableId{Wing::B, 0.0}; }

ExceptionalistRun run_exceptionalist(std::uint64_t n_trials, std::uint64_t seed,
                                     double responder_rate,
                                     const JointOutcomeTable& quantum) {
    if (n_trials < 1) throw std::invalid_argument("n_trials must be >= 1");
    if (!(responder_rate > 0.0 && responder_rate < 1.0)) {
        throw std::invalid_argument("responder rate must lie in (0, 1)");
    }
    AngleTable drug_table;
    drug_table.wing_a = {0.0, std::numbers::pi / 2.0};
    drug_table.wing_b = {0.0};

    ExceptionalistRun run;
    run.drug.meta.model_id = "exceptionalist-drug";
    run.drug.meta.seed = seed;
    run.bell.meta.model_id = "exceptionalist-bell";
    run.bell.meta.seed = seed;
    run.drug.trials.reserve(n_trials);
    run.bell.trials.reserve(n_trials);

    for (std::uint64_t i = 0; i < n_trials; ++i) {
        // one shared coin stream: word 3i for the drug group,
        // words 3i+1 and 3i+2 for the Bell joint setting
        const int group = static_cast<int>(counter_word(seed, 3 * i) & 1);
        const int index_a = static_cast<int>(counter_word(seed, 3 * i + 1) % 2);
        const int index_b = static_cast<int>(counter_word(seed, 3 * i + 2) % 2);

        RandomStream responder_stream(seed, i, "responder");
        const Outcome response = responder_stream.next() < responder_rate
                                     ? Outcome::plus
                                     : Outcome::minus;
        TrialRecord drug;
        drug.trial_index = i;
        drug.model_id = run.drug.meta.model_id;
        drug.setting_a = drug_table.setting(Wing::A, group);
        drug.setting_b = drug_table.setting(Wing::B, 0);
        drug.outcomes = std::make_pair(response, response);
        drug.add_snapshot(Stage::preparation, OnticState::make_assignment(
                                                  {{drug_responder_observable(), response}}));
        run.drug.trials.push_back(std::move(drug));

        run.bell.trials.push_back(run_goblin2_at(quantum, i, seed, index_a, index_b,
                                                 run.bell.meta.model_id));
    }
    run.drug.meta.trial_count = run.drug.trials.size();
    run.bell.meta.trial_count = run.bell.trials.size();
    return run;
}

double counterfactual_definiteness_fraction(std::span<const TrialRecord> trials,
                                            Stage stage) {
    if (trials.empty()) throw std::invalid_argument("empty ensemble");
    std::uint64_t offending = 0;
    for (const auto& trial : trials) {
        const OnticState* state = trial.snapshot(stage);
        if (state == nullptr) {
            throw std::runtime_error("missing snapshot at stage " + stage_name(stage) +
                                     " for trial " + std::to_string(trial.trial_index));
        }
        if (state->kind != StateKind::assignment) continue;
        for (const auto& obs : state->definedness()) {
            const bool measured =
                (trial.setting_a && trial.setting_a->observable() == obs) ||
                (trial.setting_b && trial.setting_b->observable() == obs);
            if (!measured) {
                ++offending;
                break;
            }
        }
    }
    return static_cast<double>(offending) / static_cast<double>(trials.size());
}

std::uint64_t nomic_exclusion_violations(std::span<const TrialRecord> trials,
                                         const GoblinTables& tables) {
    std::uint64_t violations = 0;
    for (const auto& trial : trials) {
        const OnticState* state = trial.snapshot(Stage::preparation);
        if (state == nullptr || state->kind != StateKind::assignment ||
            state->values.size() != 4 || !trial.setting_a || !trial.setting_b) {
            throw std::runtime_error("nomic exclusion audit needs total-lambda trials");
        }
        int lambda = 0;
        for (int i = 0; i < 2; ++i) {
            ObservableId obs{Wing::A, tables.table.wing_a[i]};
            if (state->values.at(obs) == Outcome::plus) lambda |= 1 << i;
        }
        for (int j = 0; j < 2; ++j) {
            ObservableId obs{Wing::B, tables.table.wing_b[j]};
            if (state->values.at(obs) == Outcome::plus) lambda |= 1 << (2 + j);
        }
        const int index_a = tables.table.index_of(Wing::A, trial.setting_a->angle);
        const int index_b = tables.table.index_of(Wing::B, trial.setting_b->angle);
        if (index_a < 0 || index_b < 0) {
            throw std::runtime_error("trial setting not in the goblin angle table");
        }
        if (tables.setting_weights[lambda][2 * index_a + index_b] < 1e-15) ++violations;
    }
    return violations;
}

std::array<std::array<double, 2>, 2> lambda_prior_correlators(
    const std::array<double, kLambdaCount>& prior) {
    std::array<std::array<double, 2>, 2> e{};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            double sum = 0.0;
            for (int lambda = 0; lambda < kLambdaCount; ++lambda) {
                sum += prior[lambda] *
                       outcome_value(lambda_component(lambda, i)) *
                       outcome_value(lambda_component(lambda, 2 + j));
            }
            e[i][j] = sum;
        }
    }
    return e;
}

}  // namespace sibell
