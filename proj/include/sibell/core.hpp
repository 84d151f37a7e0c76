#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

// Shared vocabulary: settings, outcomes, ontic states, staged snapshots,
// trials and ensembles, plus the canonical text encodings used by the
// analyzers and the trial-log format.
namespace sibell {

inline constexpr double kAngleTol = 1e-12;

enum class Wing { A, B };

char wing_char(Wing w);
Wing wing_from_char(char c);

// Polarization-style observables are pi-periodic: fold into [0, pi).
double canonicalize_angle(double radians);

// Canonical text form of an angle, in degrees, trailing zeros trimmed
// ("0", "22.5", "67.5"). Stable to 1e-9 degrees.
std::string angle_token(double radians);
double angle_from_degrees_text(const std::string& text);

enum class Outcome : int { plus = +1, minus = -1 };

inline int outcome_value(Outcome o) { return static_cast<int>(o); }
Outcome outcome_from_value(int v);
char outcome_char(Outcome o);
Outcome outcome_from_char(char c);
inline Outcome outcome_flip(Outcome o) {
    return o == Outcome::plus ? Outcome::minus : Outcome::plus;
}

// One observable: a wing plus a canonical measurement angle.
struct ObservableId {
    Wing wing = Wing::A;
    double angle = 0.0;  // canonical radians

    std::string token() const;  // "A0", "B22.5"
};

struct ObservableLess {
    bool operator()(const ObservableId& a, const ObservableId& b) const;
};

bool operator==(const ObservableId& a, const ObservableId& b);

enum class SettingKind { angle, binary_indexed };

struct Setting {
    Wing wing = Wing::A;
    double angle = 0.0;  // canonical radians; indexed settings are resolved on draw
    SettingKind kind = SettingKind::angle;
    int index = -1;  // table index when kind == binary_indexed

    std::string token() const;
    ObservableId observable() const { return ObservableId{wing, angle}; }
};

// Identity is the resolved observable; kind/index are draw provenance.
bool operator==(const Setting& a, const Setting& b);

enum class StateKind { assignment, quantum, empty };

// Quantum-valued ontic component: either the maximally mixed single-qubit
// state or an eigenstate of a measurement basis. Amplitudes are carried for
// numeric checks but identity is the (mixed | basis+eigenvalue) tag.
struct QuantumPart {
    bool mixed = false;
    double basis_angle = 0.0;
    Outcome eig = Outcome::plus;
    std::complex<double> a0{0.0, 0.0};
    std::complex<double> a1{0.0, 0.0};

    std::string token() const;  // "Q:mixed", "Q:basis0:eig-"
};

bool operator==(const QuantumPart& a, const QuantumPart& b);

// The model's lambda: a total or partial outcome assignment, a list of
// quantum components, or nothing at all.
struct OnticState {
    StateKind kind = StateKind::empty;
    std::map<ObservableId, Outcome, ObservableLess> values;  // assignment variant
    std::vector<QuantumPart> parts;                          // quantum variant

    static OnticState make_empty();
    static OnticState make_assignment(
        std::vector<std::pair<ObservableId, Outcome>> entries);
    static OnticState make_quantum(std::vector<QuantumPart> parts);

    bool defines(const ObservableId& obs) const;
    std::vector<ObservableId> definedness() const;
};

bool operator==(const OnticState& a, const OnticState& b);

// Deterministic, injective token for an ontic state; observables sorted by
// (wing, angle), the empty state encodes as "∅".
std::string canonical_encoding(const OnticState& state);
OnticState state_from_encoding(const std::string& token);

enum class Stage {
    preparation,
    source_temporal,
    causal_step_1,
    causal_step_3,
    post_measurement,
};

inline constexpr int kStageCount = 5;
std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct StageSnapshot {
    Stage stage = Stage::preparation;
    OnticState state;
};

bool operator==(const StageSnapshot& a, const StageSnapshot& b);

struct TrialRecord {
    std::uint64_t trial_index = 0;
    std::string model_id;
    std::optional<Setting> setting_a;
    std::optional<Setting> setting_b;
    std::optional<std::pair<Outcome, Outcome>> outcomes;
    std::vector<StageSnapshot> snapshots;  // at most one per stage
    std::set<std::string> flags;

    const OnticState* snapshot(Stage stage) const;
    void add_snapshot(Stage stage, OnticState state);  // throws on duplicate
    bool has_flag(const std::string& flag) const { return flags.count(flag) > 0; }
};

bool operator==(const TrialRecord& a, const TrialRecord& b);

// Label token of one wing's setting ("A0"); errors with "unlabeled trial"
// when that wing has no setting.
std::string label_by_setting(const TrialRecord& trial, Wing wing);
std::string joint_label(const TrialRecord& trial);  // "A0×B22.5"

enum class LabelScheme { wing_a, wing_b, joint };
std::string label_scheme_name(LabelScheme scheme);
LabelScheme label_scheme_from_name(const std::string& name);
std::string trial_label(const TrialRecord& trial, LabelScheme scheme);

struct EnsembleMeta {
    std::string model_id;
    std::uint64_t seed = 0;
    std::uint64_t trial_count = 0;
    std::string config_digest;  // hex
};

bool operator==(const EnsembleMeta& a, const EnsembleMeta& b);

struct Ensemble {
    EnsembleMeta meta;
    std::vector<TrialRecord> trials;  // sorted by trial_index, unique
};

bool operator==(const Ensemble& a, const Ensemble& b);

// Trial-log format: '#' meta header, then one tab-separated record per line:
// trial_index, model_id, settingA, settingB, outcomeA, outcomeB,
// snapshots ("stage=encoding" joined by ';'), flags (joined by ',').
// Absent values serialize as "∅". UTF-8 throughout.
std::string serialize_trial(const TrialRecord& trial);
TrialRecord parse_trial(const std::string& line);
std::string serialize_ensemble(const Ensemble& ensemble);
Ensemble parse_ensemble(const std::string& text);
Ensemble load_ensemble(const std::string& path);
void save_ensemble(const Ensemble& ensemble, const std::string& path);

// Checks injectivity of canonical_encoding over everything a run logged:
// structurally distinct states must never share a token.
struct CollisionAudit {
    std::uint64_t states_checked = 0;
    std::uint64_t collisions = 0;
};
CollisionAudit encoding_collision_audit(std::span<const TrialRecord> trials);

}  // namespace sibell
