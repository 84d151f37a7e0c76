#include "sibell/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace sibell {

namespace {

constexpr const char* kEmptyToken = "\xE2\x88\x85";  // ∅
constexpr const char* kCrossToken = "\xC3\x97";      // ×

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = text.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(text.substr(start));
            return out;
        }
        out.push_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

char wing_char(Wing w) { return w == Wing::A ? 'A' : 'B'; }

Wing wing_from_char(char c) {
    if (c == 'A') return Wing::A;
    if (c == 'B') return Wing::B;
    throw std::invalid_argument(std::string("unknown wing '") + c + "'");
}

double canonicalize_angle(double radians) {
    const double pi = std::numbers::pi;
    double r = std::fmod(radians, pi);
    if (r < 0.0) r += pi;
    if (r >= pi - kAngleTol) r = 0.0;
    if (std::abs(r) < kAngleTol) r = 0.0;
    return r;
}

std::string angle_token(double radians) {
    const double deg = canonicalize_angle(radians) * (180.0 / std::numbers::pi);
    double rounded = std::round(deg * 1e9) / 1e9;
    if (rounded >= 180.0) rounded = 0.0;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9f", rounded);
    std::string s(buf);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    if (s.empty() || s == "-0") s = "0";
    return s;
}

double angle_from_degrees_text(const std::string& text) {
    if (text.empty()) throw std::invalid_argument("empty angle token");
    std::size_t used = 0;
    double deg = std::stod(text, &used);
    if (used != text.size()) {
        throw std::invalid_argument("malformed angle token '" + text + "'");
    }
    return canonicalize_angle(deg * std::numbers::pi / 180.0);
}

Outcome outcome_from_value(int v) {
    if (v == 1) return Outcome::plus;
    if (v == -1) return Outcome::minus;
    throw std::invalid_argument("outcome value must be +1 or -1");
}

char outcome_char(Outcome o) { return o == Outcome::plus ? '+' : '-'; }

Outcome outcome_from_char(char c) {
    if (c == '+') return Outcome::plus;
    if (c == '-') return Outcome::minus;
    throw std::invalid_argument(std::string("unknown outcome '") + c + "'");
}

std::string ObservableId::token() const {
    return std::string(1, wing_char(wing)) + angle_token(angle);
}

bool ObservableLess::operator()(const ObservableId& a, const ObservableId& b) const {
    if (a.wing != b.wing) return a.wing < b.wing;
    return a.angle < b.angle - kAngleTol;
}

bool operator==(const ObservableId& a, const ObservableId& b) {
    return a.wing == b.wing && std::abs(a.angle - b.angle) <= kAngleTol;
}

std::string Setting::token() const {
    return std::string(1, wing_char(wing)) + angle_token(angle);
}

bool operator==(const Setting& a, const Setting& b) {
    return a.wing == b.wing && std::abs(a.angle - b.angle) <= kAngleTol;
}

std::string QuantumPart::token() const {
    if (mixed) return "Q:mixed";
    return "Q:basis" + angle_token(basis_angle) + ":eig" + outcome_char(eig);
}

bool operator==(const QuantumPart& a, const QuantumPart& b) {
    if (a.mixed != b.mixed) return false;
    if (a.mixed) return true;
    return std::abs(a.basis_angle - b.basis_angle) <= kAngleTol && a.eig == b.eig;
}

OnticState OnticState::make_empty() { return OnticState{}; }

OnticState OnticState::make_assignment(
    std::vector<std::pair<ObservableId, Outcome>> entries) {
    OnticState s;
    s.kind = StateKind::assignment;
    for (auto& [obs, out] : entries) {
        ObservableId canon{obs.wing, canonicalize_angle(obs.angle)};
        auto [it, inserted] = s.values.emplace(canon, out);
        if (!inserted) {
            throw std::invalid_argument("duplicate observable " + canon.token() +
                                        " in assignment state");
        }
    }
    return s;
}

OnticState OnticState::make_quantum(std::vector<QuantumPart> parts) {
    if (parts.empty()) throw std::invalid_argument("quantum state needs at least one part");
    OnticState s;
    s.kind = StateKind::quantum;
    s.parts = std::move(parts);
    return s;
}

bool OnticState::defines(const ObservableId& obs) const {
    return kind == StateKind::assignment &&
           values.count(ObservableId{obs.wing, canonicalize_angle(obs.angle)}) > 0;
}

std::vector<ObservableId> OnticState::definedness() const {
    std::vector<ObservableId> out;
    out.reserve(values.size());
    for (const auto& [obs, _] : values) out.push_back(obs);
    return out;
}

bool operator==(const OnticState& a, const OnticState& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case StateKind::empty:
            return true;
        case StateKind::assignment: {
            if (a.values.size() != b.values.size()) return false;
            auto ia = a.values.begin();
            auto ib = b.values.begin();
            for (; ia != a.values.end(); ++ia, ++ib) {
                if (!(ia->first == ib->first) || ia->second != ib->second) return false;
            }
            return true;
        }
        case StateKind::quantum:
            return a.parts == b.parts;
    }
    return false;
}

std::string canonical_encoding(const OnticState& state) {
    switch (state.kind) {
        case StateKind::empty:
            return kEmptyToken;
        case StateKind::assignment: {
            std::string out;
            for (const auto& [obs, val] : state.values) {
                if (!out.empty()) out += '|';
                out += obs.token();
                out += ':';
                out += outcome_char(val);
            }
            return out;
        }
        case StateKind::quantum: {
            std::string out;
            for (const auto& part : state.parts) {
                if (!out.empty()) out += '|';
                out += part.token();
            }
            return out;
        }
    }
    throw std::logic_error("unreachable state kind");
}

namespace {

QuantumPart quantum_part_from_token(const std::string& token) {
    if (token == "Q:mixed") {
        QuantumPart p;
        p.mixed = true;
        return p;
    }
    // Q:basis<deg>:eig<sign>
    const std::string prefix = "Q:basis";
    std::size_t eig_pos = token.rfind(":eig");
    if (token.rfind(prefix, 0) != 0 || eig_pos == std::string::npos ||
        eig_pos + 5 != token.size()) {
        throw std::invalid_argument("malformed quantum part token '" + token + "'");
    }
    QuantumPart p;
    p.mixed = false;
    p.basis_angle = angle_from_degrees_text(
        token.substr(prefix.size(), eig_pos - prefix.size()));
    p.eig = outcome_from_char(token[eig_pos + 4]);
    // reconstruct amplitudes as the tagged real rotation eigenstate
    const double c = std::cos(p.basis_angle), s = std::sin(p.basis_angle);
    if (p.eig == Outcome::plus) {
        p.a0 = c;
        p.a1 = s;
    } else {
        p.a0 = -s;
        p.a1 = c;
    }
    return p;
}

std::pair<ObservableId, Outcome> assignment_part_from_token(const std::string& token) {
    std::size_t colon = token.rfind(':');
    if (colon == std::string::npos || colon + 2 != token.size() || colon < 2) {
        throw std::invalid_argument("malformed assignment part '" + token + "'");
    }
    ObservableId obs;
    obs.wing = wing_from_char(token[0]);
    obs.angle = angle_from_degrees_text(token.substr(1, colon - 1));
    return {obs, outcome_from_char(token[colon + 1])};
}

}  // namespace

OnticState state_from_encoding(const std::string& token) {
    if (token == kEmptyToken) return OnticState::make_empty();
    if (token.empty()) throw std::invalid_argument("empty state encoding");
    std::vector<std::string> items = split(token, '|');
    if (items.front().rfind("Q:", 0) == 0) {
        std::vector<QuantumPart> parts;
        parts.reserve(items.size());
        for (const auto& item : items) parts.push_back(quantum_part_from_token(item));
        return OnticState::make_quantum(std::move(parts));
    }
    std::vector<std::pair<ObservableId, Outcome>> entries;
    entries.reserve(items.size());
    for (const auto& item : items) entries.push_back(assignment_part_from_token(item));
    return OnticState::make_assignment(std::move(entries));
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::preparation: return "preparation";
        case Stage::source_temporal: return "source-temporal";
        case Stage::causal_step_1: return "causal-step-1";
        case Stage::causal_step_3: return "causal-step-3";
        case Stage::post_measurement: return "post-measurement";
    }
    throw std::logic_error("unreachable stage");
}

Stage stage_from_name(const std::string& name) {
    for (int i = 0; i < kStageCount; ++i) {
        Stage s = static_cast<Stage>(i);
        if (stage_name(s) == name) return s;
    }
    throw std::invalid_argument("unknown stage '" + name + "'");
}

bool operator==(const StageSnapshot& a, const StageSnapshot& b) {
    return a.stage == b.stage && a.state == b.state;
}

const OnticState* TrialRecord::snapshot(Stage stage) const {
    for (const auto& snap : snapshots) {
        if (snap.stage == stage) return &snap.state;
    }
    return nullptr;
}

void TrialRecord::add_snapshot(Stage stage, OnticState state) {
    if (snapshot(stage) != nullptr) {
        throw std::invalid_argument("duplicate snapshot for stage " + stage_name(stage));
    }
    snapshots.push_back(StageSnapshot{stage, std::move(state)});
    std::sort(snapshots.begin(), snapshots.end(),
              [](const StageSnapshot& a, const StageSnapshot& b) {
                  return static_cast<int>(a.stage) < static_cast<int>(b.stage);
              });
}

bool operator==(const TrialRecord& a, const TrialRecord& b) {
    return a.trial_index == b.trial_index && a.model_id == b.model_id &&
           a.setting_a == b.setting_a && a.setting_b == b.setting_b &&
           a.outcomes == b.outcomes && a.snapshots == b.snapshots && a.flags == b.flags;
}

std::string label_by_setting(const TrialRecord& trial, Wing wing) {
    const auto& setting = wing == Wing::A ? trial.setting_a : trial.setting_b;
    if (!setting.has_value()) {
        throw std::runtime_error("unlabeled trial " + std::to_string(trial.trial_index));
    }
    return setting->token();
}

std::string joint_label(const TrialRecord& trial) {
    return label_by_setting(trial, Wing::A) + kCrossToken + label_by_setting(trial, Wing::B);
}

std::string label_scheme_name(LabelScheme scheme) {
    switch (scheme) {
        case LabelScheme::wing_a: return "A";
        case LabelScheme::wing_b: return "B";
        case LabelScheme::joint: return "joint";
    }
    throw std::logic_error("unreachable label scheme");
}

LabelScheme label_scheme_from_name(const std::string& name) {
    if (name == "A" || name == "a") return LabelScheme::wing_a;
    if (name == "B" || name == "b") return LabelScheme::wing_b;
    if (name == "joint") return LabelScheme::joint;
    throw std::invalid_argument("unknown label scheme '" + name + "'");
}

std::string trial_label(const TrialRecord& trial, LabelScheme scheme) {
    switch (scheme) {
        case LabelScheme::wing_a: return label_by_setting(trial, Wing::A);
        case LabelScheme::wing_b: return label_by_setting(trial, Wing::B);
        case LabelScheme::joint: return joint_label(trial);
    }
    throw std::logic_error("unreachable label scheme");
}

bool operator==(const EnsembleMeta& a, const EnsembleMeta& b) {
    return a.model_id == b.model_id && a.seed == b.seed &&
           a.trial_count == b.trial_count && a.config_digest == b.config_digest;
}

bool operator==(const Ensemble& a, const Ensemble& b) {
    return a.meta == b.meta && a.trials == b.trials;
}

namespace {

std::string setting_field(const std::optional<Setting>& s) {
    return s.has_value() ? s->token() : kEmptyToken;
}

std::string outcome_field(const std::optional<std::pair<Outcome, Outcome>>& o, bool first) {
    if (!o.has_value()) return kEmptyToken;
    Outcome v = first ? o->first : o->second;
    return v == Outcome::plus ? "+1" : "-1";
}

Setting setting_from_token(const std::string& token) {
    if (token.size() < 2) throw std::invalid_argument("malformed setting '" + token + "'");
    Setting s;
    s.wing = wing_from_char(token[0]);
    s.angle = angle_from_degrees_text(token.substr(1));
    return s;
}

}  // namespace

std::string serialize_trial(const TrialRecord& trial) {
    if (trial.has_flag("nomically-excluded") && trial.outcomes.has_value()) {
        throw std::invalid_argument("nomically-excluded trial " +
                                    std::to_string(trial.trial_index) +
                                    " must not carry outcomes");
    }
    std::string snaps;
    for (const auto& snap : trial.snapshots) {
        if (!snaps.empty()) snaps += ';';
        snaps += stage_name(snap.stage);
        snaps += '=';
        snaps += canonical_encoding(snap.state);
    }
    if (snaps.empty()) snaps = kEmptyToken;

    std::string flags;
    for (const auto& flag : trial.flags) {
        if (!flags.empty()) flags += ',';
        flags += flag;
    }
    if (flags.empty()) flags = kEmptyToken;

    std::string line = std::to_string(trial.trial_index);
    line += '\t';
    line += trial.model_id;
    line += '\t';
    line += setting_field(trial.setting_a);
    line += '\t';
    line += setting_field(trial.setting_b);
    line += '\t';
    line += outcome_field(trial.outcomes, true);
    line += '\t';
    line += outcome_field(trial.outcomes, false);
    line += '\t';
    line += snaps;
    line += '\t';
    line += flags;
    return line;
}

TrialRecord parse_trial(const std::string& line) {
    std::vector<std::string> fields = split(line, '\t');
    if (fields.size() != 8) {
        throw std::invalid_argument("trial record needs 8 fields, got " +
                                    std::to_string(fields.size()));
    }
    TrialRecord t;
    t.trial_index = std::stoull(fields[0]);
    t.model_id = fields[1];
    if (fields[2] != kEmptyToken) t.setting_a = setting_from_token(fields[2]);
    if (fields[3] != kEmptyToken) t.setting_b = setting_from_token(fields[3]);
    const bool has_a = fields[4] != kEmptyToken;
    const bool has_b = fields[5] != kEmptyToken;
    if (has_a != has_b) {
        throw std::invalid_argument("outcomes must be both present or both absent");
    }
    if (has_a) {
        auto parse_outcome = [](const std::string& f) {
            if (f == "+1") return Outcome::plus;
            if (f == "-1") return Outcome::minus;
            throw std::invalid_argument("malformed outcome '" + f + "'");
        };
        t.outcomes = std::make_pair(parse_outcome(fields[4]), parse_outcome(fields[5]));
    }
    if (fields[6] != kEmptyToken) {
        for (const auto& item : split(fields[6], ';')) {
            std::size_t eq = item.find('=');
            if (eq == std::string::npos) {
                throw std::invalid_argument("malformed snapshot '" + item + "'");
            }
            t.add_snapshot(stage_from_name(item.substr(0, eq)),
                           state_from_encoding(item.substr(eq + 1)));
        }
    }
    if (fields[7] != kEmptyToken) {
        for (const auto& flag : split(fields[7], ',')) t.flags.insert(flag);
    }
    return t;
}

std::string serialize_ensemble(const Ensemble& ensemble) {
    for (std::size_t i = 1; i < ensemble.trials.size(); ++i) {
        if (ensemble.trials[i - 1].trial_index >= ensemble.trials[i].trial_index) {
            throw std::invalid_argument("trials must be sorted by unique trial_index");
        }
    }
    std::string out = "# si-bell-sim log v1\n";
    out += "# model = " + ensemble.meta.model_id + "\n";
    out += "# seed = " + std::to_string(ensemble.meta.seed) + "\n";
    out += "# trials = " + std::to_string(ensemble.meta.trial_count) + "\n";
    out += "# config_digest = " + ensemble.meta.config_digest + "\n";
    for (const auto& trial : ensemble.trials) {
        out += serialize_trial(trial);
        out += '\n';
    }
    return out;
}

Ensemble parse_ensemble(const std::string& text) {
    Ensemble e;
    std::istringstream in(text);
    std::string line;
    auto meta_value = [](const std::string& l) {
        std::size_t eq = l.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("malformed meta line");
        std::size_t start = l.find_first_not_of(' ', eq + 1);
        return start == std::string::npos ? std::string() : l.substr(start);
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# model =", 0) == 0) e.meta.model_id = meta_value(line);
            else if (line.rfind("# seed =", 0) == 0) e.meta.seed = std::stoull(meta_value(line));
            else if (line.rfind("# trials =", 0) == 0)
                e.meta.trial_count = std::stoull(meta_value(line));
            else if (line.rfind("# config_digest =", 0) == 0)
                e.meta.config_digest = meta_value(line);
            continue;
        }
        e.trials.push_back(parse_trial(line));
    }
    for (std::size_t i = 1; i < e.trials.size(); ++i) {
        if (e.trials[i - 1].trial_index >= e.trials[i].trial_index) {
            throw std::invalid_argument("log trials out of order at line for index " +
                                        std::to_string(e.trials[i].trial_index));
        }
    }
    if (e.meta.trial_count != e.trials.size()) {
        throw std::invalid_argument("log meta trial count does not match record count");
    }
    return e;
}

Ensemble load_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open log file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_ensemble(buf.str());
}

void save_ensemble(const Ensemble& ensemble, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write log file '" + path + "'");
    out << serialize_ensemble(ensemble);
}

CollisionAudit encoding_collision_audit(std::span<const TrialRecord> trials) {
    CollisionAudit audit;
    std::unordered_map<std::string, OnticState> seen;
    for (const auto& trial : trials) {
        for (const auto& snap : trial.snapshots) {
            std::string token = canonical_encoding(snap.state);
            auto it = seen.find(token);
            if (it == seen.end()) {
                seen.emplace(std::move(token), snap.state);
                ++audit.states_checked;
            } else if (!(it->second == snap.state)) {
                ++audit.collisions;
            }
        }
    }
    return audit;
}

}  // namespace sibell
