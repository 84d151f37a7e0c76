#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sibell/core.hpp"
#include "sibell/quantum.hpp"
#include "sibell/settings.hpp"

// Every toy theory behind one trial-generation interface. Snapshot stages
// emitted per model:
//   local-hv, goblin-1          preparation (total lambda)
//   goblin-2, goblin-3          preparation (partial lambda)
//   zigzag                      causal-step-1, source-temporal, causal-step-3
//   fluke-coin, fluke-ent.      preparation
//   all-at-once                 preparation (empty lambda_0), post-measurement
//   exceptionalist drug/bell    preparation
// Every run_* is a pure function of (parameters, seed, trial_index).
namespace sibell {

// Each model declares its causal structure and the snapshot stages it emits.
enum class CausalStructure {
    local_hv,
    goblin_1,  // lambda -> G -> X
    goblin_2,  // lambda <- G -> X
    goblin_3,  // X -> G -> lambda
    zigzag,
    fluke,
    branching,
    galton,
    all_at_once,
    exceptionalist,
};
std::string causal_structure_name(CausalStructure s);

struct ModelInfo {
    std::string model_id;
    CausalStructure structure = CausalStructure::local_hv;
    std::vector<Stage> stages;  // snapshot stages every trial carries
};

const std::vector<ModelInfo>& model_catalog();
const ModelInfo* model_info(const std::string& model_id);  // nullptr if unknown

// Quantum joint outcome probabilities P_Q(a,b|X,Y) on a 2x2 angle table.
struct JointOutcomeTable {
    AngleTable table;
    // p[joint][a][b], joint = 2*index_a + index_b, outcome index 0=+1 1=-1
    std::array<std::array<std::array<double, 2>, 2>, 4> p{};

    static JointOutcomeTable from_singlet(const AngleTable& table,
                                          bool correlated_pairs = false);
    double prob(int index_a, int index_b, Outcome a, Outcome b) const;
};

inline int outcome_slot(Outcome o) { return o == Outcome::plus ? 0 : 1; }
inline Outcome outcome_from_slot(int s) { return s == 0 ? Outcome::plus : Outcome::minus; }

// lambda index: 4 bits over (a0, a1, b0, b1); set bit means +1
inline constexpr int kLambdaCount = 16;
Outcome lambda_component(int lambda_index, int slot);
OnticState total_assignment_state(const AngleTable& table, int lambda_index);
OnticState partial_assignment_state(const Setting& sa, Outcome a, const Setting& sb,
                                    Outcome b);

// q(lambda) over the 16 total assignments plus w(X,Y|lambda) per lambda.
struct GoblinTables {
    AngleTable table;
    std::array<double, kLambdaCount> lambda_prior{};                 // q
    std::array<std::array<double, 4>, kLambdaCount> setting_weights{};  // w[lambda][joint]

    bool defined(int lambda_index) const { return lambda_prior[lambda_index] > 0.0; }
};

// Joint construction P(lambda,X,Y) = 1/4 * P_Q(lambda_X, lambda_Y | X,Y) * 1/4,
// then q = sum over settings and w = P / q. Uniform setting marginals and
// exact reproduction of P_Q hold by construction.
GoblinTables derive_goblin1_tables(const AngleTable& table, const JointOutcomeTable& quantum);

TrialRecord run_local_hv(std::uint64_t trial_index, std::uint64_t seed,
                         const SettingSource& source);

TrialRecord run_goblin1(const GoblinTables& tables, std::uint64_t trial_index,
                        std::uint64_t seed);
TrialRecord run_goblin2(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                        std::uint64_t seed, const SettingSource& source,
                        bool debug_excluded = false);
// goblin-3: settings forced to what the deterministic-counter source will
// produce; the goblin evaluates the same mixing function ahead of time.
TrialRecord run_goblin3(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                        std::uint64_t seed, bool debug_excluded = false);
// shared-stream variant used by the exceptionalist Bell arm
TrialRecord run_goblin2_at(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                           std::uint64_t seed, int index_a, int index_b,
                           const std::string& model_id, bool debug_excluded = false);
TrialRecord run_goblin(int variant, const GoblinTables& tables,
                       const JointOutcomeTable& quantum, std::uint64_t trial_index,
                       std::uint64_t seed, const SettingSource& source,
                       bool debug_excluded = false);

TrialRecord run_zigzag(std::uint64_t trial_index, std::uint64_t seed,
                       const SettingSource& source, bool correlated_pairs = false);

TrialRecord run_all_at_once(const JointOutcomeTable& quantum, std::uint64_t trial_index,
                            std::uint64_t seed, const SettingSource& source);

enum class FlukeCondition { none, post_select_obeyed, force_all_heads };
std::string fluke_condition_name(FlukeCondition c);
FlukeCondition fluke_condition_from_name(const std::string& name);

Ensemble run_fluke_coin(std::uint64_t n_trials, std::uint64_t seed, FlukeCondition condition);
Ensemble run_fluke_entanglement(std::uint64_t n_trials, std::uint64_t seed,
                                FlukeCondition condition, const JointOutcomeTable& quantum);

// sense-2 reference distributions, keyed by canonical lambda tokens
std::map<std::string, double> coin_theory_probabilities();
std::map<std::string, double> entanglement_mixture_probabilities(
    const JointOutcomeTable& quantum);
std::map<std::string, double> entanglement_quantum_probabilities(
    const JointOutcomeTable& quantum);

// Everett-style branch enumeration for n quantum coin flips, n <= 24.
struct Branch {
    std::uint32_t bits = 0;  // bit i set = heads on flip i
    int heads = 0;
};
inline constexpr int kMaxBranchFlips = 24;
std::vector<Branch> enumerate_branches(int n);
double branch_weight(int n);  // 2^-n, Born weight of each branch
bool is_fluke_branch(int heads, int n, double epsilon);  // |h/n - 1/2| > eps
std::vector<double> branch_heads_weights(int n);         // total weight per heads count
double fluke_branch_weight(int n, double epsilon);

// Deterministic Galton board: bit i of the initial condition is the bounce
// direction at row i (0 left, 1 right); box index = number of rights.
int run_galton_single(int rows, const std::vector<int>& initial_condition);
std::vector<int> galton_ic_from_text(const std::string& bits);
std::vector<std::uint64_t> galton_sweep_exhaustive(int rows);  // rows <= 24
std::vector<std::uint64_t> galton_sweep_sampled(int rows, std::uint64_t samples,
                                                std::uint64_t seed);

// Exceptionalist run: one shared deterministic-counter word stream feeds both
// arms (word 3i: drug group bit; words 3i+1, 3i+2: Bell joint setting).
struct ExceptionalistRun {
    Ensemble drug;
    Ensemble bell;
};
ExceptionalistRun run_exceptionalist(std::uint64_t n_trials, std::uint64_t seed,
                                     double responder_rate,
                                     const JointOutcomeTable& quantum);

inline constexpr double kDrugResponderAngle = 0.0;  // lambda_drug lives on B@0
ObservableId drug_responder_observable();

// Audits ----------------------------------------------------------------

// Fraction of trials whose stage-lambda assigns a value to an observable the
// trial did not measure.
double counterfactual_definiteness_fraction(std::span<const TrialRecord> trials,
                                            Stage stage);

// Number of logged trials pairing a total lambda with a joint setting of zero
// goblin weight (strict nomic exclusion must make this 0).
std::uint64_t nomic_exclusion_violations(std::span<const TrialRecord> trials,
                                         const GoblinTables& tables);

// Exact CHSH correlators for a local HV model with the given lambda prior.
std::array<std::array<double, 2>, 2> lambda_prior_correlators(
    const std::array<double, kLambdaCount>& prior);

}  // namespace sibell
