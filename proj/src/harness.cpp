#include "sibell/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "sibell/quantum.hpp"

namespace sibell {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------- file io

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file '" + path + "'");
    out << content;
}

// ------------------------------------------------------------- angle text

double parse_angle_text(const std::string& text) {
    std::string s;
    // strip spaces, fold the unicode pi
    for (std::size_t i = 0; i < text.size();) {
        if (text.compare(i, 2, "\xCF\x80") == 0) {
            s += "pi";
            i += 2;
        } else if (text[i] == ' ' || text[i] == '\t') {
            ++i;
        } else {
            s += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
            ++i;
        }
    }
    if (s.empty()) throw std::invalid_argument("empty angle");
    auto parse_number = [](const std::string& t) {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument("malformed number '" + t + "'");
        return v;
    };
    try {
        if (s.size() > 3 && s.compare(s.size() - 3, 3, "deg") == 0) {
            return parse_number(s.substr(0, s.size() - 3)) * std::numbers::pi / 180.0;
        }
        const std::size_t pi_pos = s.find("pi");
        if (pi_pos == std::string::npos) return parse_number(s);
        const double coeff = pi_pos == 0 ? 1.0 : parse_number(s.substr(0, pi_pos));
        double denom = 1.0;
        const std::string rest = s.substr(pi_pos + 2);
        if (!rest.empty()) {
            if (rest[0] != '/') throw std::invalid_argument("malformed angle '" + s + "'");
            denom = parse_number(rest.substr(1));
            if (denom == 0.0) throw std::invalid_argument("zero denominator");
        }
        return coeff * std::numbers::pi / denom;
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception&) {
        throw std::invalid_argument("malformed angle '" + text + "'");
    }
}

// ---------------------------------------------------------- config parsing

std::string config_digest_hex(const std::string& text) {
    const std::uint64_t h = fnv1a64(text);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

bool is_known_model(const std::string& model_id) {
    static const std::vector<std::string> known = {
        "local-hv",  "goblin-1",   "goblin-2",           "goblin-3",
        "zigzag",    "all-at-once", "fluke-coin",        "fluke-entanglement",
        "exceptionalist", "branching", "galton"};
    return std::find(known.begin(), known.end(), model_id) != known.end();
}

namespace {

struct RawEntry {
    std::string value;
    int line = 0;
};

struct ConfigBuilder {
    std::map<std::string, RawEntry> entries;  // "section.key"
    std::vector<ConfigError> errors;

    void fail(int line, const std::string& message) {
        errors.push_back(ConfigError{line, message});
    }

    const RawEntry* find(const std::string& key) const {
        auto it = entries.find(key);
        return it == entries.end() ? nullptr : &it->second;
    }

    template <typename F>
    void with(const std::string& key, F&& f) {
        if (const RawEntry* e = find(key)) {
            try {
                f(e->value);
            } catch (const std::exception& ex) {
                fail(e->line, key + ": " + ex.what());
            }
        }
    }
};

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::uint64_t parse_u64(const std::string& t) {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(t, &used);
    if (used != t.size()) throw std::invalid_argument("malformed integer '" + t + "'");
    return v;
}

double parse_real(const std::string& t) {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument("malformed number '" + t + "'");
    return v;
}

bool parse_bool(const std::string& t) {
    if (t == "on" || t == "true" || t == "1") return true;
    if (t == "off" || t == "false" || t == "0") return false;
    throw std::invalid_argument("expected on/off, got '" + t + "'");
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t pos = text.find(',', start);
        if (pos == std::string::npos) pos = text.size();
        const std::string item = trim(text.substr(start, pos - start));
        if (!item.empty()) out.push_back(item);
        start = pos + 1;
    }
    return out;
}

const std::set<std::string> kKnownKeys = {
    "model.id",          "model.trials",     "model.seed",      "model.seeds",
    "model.condition",   "model.responder-rate", "model.n",     "model.epsilon",
    "model.rows",        "model.mode",       "model.ic",        "model.samples",
    "model.debug-excluded",
    "source.kind",       "source.replay",    "source.angles-a", "source.angles-b",
    "source.convention",
    "analysis.si",       "analysis.theory",  "analysis.chsh",   "analysis.alpha",
    "analysis.tau",      "analysis.n-min",
    "output.dir",        "output.log",       "output.report",   "output.csv",
};

}  // namespace

ParseResult parse_config(const std::string& text) {
    ConfigBuilder b;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                b.fail(line_no, "malformed section header '" + line + "'");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "source" && section != "analysis" &&
                section != "output") {
                b.fail(line_no, "unknown section '" + section + "'");
                section.clear();
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            b.fail(line_no, "expected 'key = value', got '" + line + "'");
            continue;
        }
        if (section.empty()) {
            b.fail(line_no, "key outside any [section]");
            continue;
        }
        const std::string key = section + "." + trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (kKnownKeys.count(key) == 0) {
            b.fail(line_no, "unknown key '" + key + "'");
            continue;
        }
        if (b.entries.count(key)) {
            b.fail(line_no, "duplicate key '" + key + "'");
            continue;
        }
        b.entries[key] = RawEntry{value, line_no};
    }

    ExperimentConfig cfg;
    cfg.angles = AngleTable::chsh_default();
    cfg.digest = config_digest_hex(text);

    if (const RawEntry* id = b.find("model.id")) {
        cfg.model_id = id->value;
        if (!is_known_model(cfg.model_id)) {
            b.fail(id->line, "unknown model id '" + cfg.model_id + "'");
        }
    } else {
        b.fail(0, "missing required key 'model.id'");
    }

    const bool ensemble_model =
        cfg.model_id != "branching" && cfg.model_id != "galton";
    if (const RawEntry* trials = b.find("model.trials")) {
        try {
            cfg.trials = parse_u64(trials->value);
            if (cfg.trials < 1) b.fail(trials->line, "trials must be >= 1");
        } catch (const std::exception& ex) {
            b.fail(trials->line, std::string("model.trials: ") + ex.what());
        }
    } else if (ensemble_model) {
        b.fail(0, "missing required key 'model.trials'");
    }

    b.with("model.seed", [&](const std::string& v) { cfg.seed = parse_u64(v); });
    b.with("model.seeds", [&](const std::string& v) {
        cfg.seeds = parse_u64(v);
        if (cfg.seeds < 1) throw std::invalid_argument("seeds must be >= 1");
    });
    b.with("model.condition",
           [&](const std::string& v) { cfg.fluke_condition = fluke_condition_from_name(v); });
    b.with("model.responder-rate", [&](const std::string& v) {
        cfg.responder_rate = parse_real(v);
        if (!(cfg.responder_rate > 0.0 && cfg.responder_rate < 1.0)) {
            throw std::invalid_argument("responder rate must lie in (0, 1)");
        }
    });
    b.with("model.n", [&](const std::string& v) {
        cfg.branch_n = static_cast<int>(parse_u64(v));
        if (cfg.branch_n < 1 || cfg.branch_n > kMaxBranchFlips) {
            throw std::invalid_argument("n must lie in [1, 24]");
        }
    });
    b.with("model.epsilon", [&](const std::string& v) {
        cfg.branch_epsilon = parse_real(v);
        if (!(cfg.branch_epsilon >= 0.0 && cfg.branch_epsilon < 0.5)) {
            throw std::invalid_argument("epsilon must lie in [0, 0.5)");
        }
    });
    b.with("model.rows", [&](const std::string& v) {
        cfg.galton_rows = static_cast<int>(parse_u64(v));
        if (cfg.galton_rows < 1) throw std::invalid_argument("rows must be >= 1");
    });
    b.with("model.mode", [&](const std::string& v) {
        if (v == "single") cfg.galton_mode = GaltonMode::single;
        else if (v == "sweep-uniform") cfg.galton_mode = GaltonMode::sweep_uniform;
        else if (v == "sweep-sampled") cfg.galton_mode = GaltonMode::sweep_sampled;
        else throw std::invalid_argument("unknown galton mode '" + v + "'");
    });
    b.with("model.ic", [&](const std::string& v) { cfg.galton_ic = v; });
    b.with("model.samples", [&](const std::string& v) {
        cfg.galton_samples = parse_u64(v);
        if (cfg.galton_samples < 1) throw std::invalid_argument("samples must be >= 1");
    });
    b.with("model.debug-excluded",
           [&](const std::string& v) { cfg.debug_excluded = parse_bool(v); });

    b.with("source.kind",
           [&](const std::string& v) { cfg.source_kind = source_kind_from_name(v); });
    b.with("source.replay", [&](const std::string& v) { cfg.replay_path = v; });
    b.with("source.angles-a", [&](const std::string& v) {
        cfg.angles.wing_a.clear();
        for (const auto& item : split_list(v)) {
            cfg.angles.wing_a.push_back(canonicalize_angle(parse_angle_text(item)));
        }
        if (cfg.angles.wing_a.empty()) throw std::invalid_argument("empty angle list");
    });
    b.with("source.angles-b", [&](const std::string& v) {
        cfg.angles.wing_b.clear();
        for (const auto& item : split_list(v)) {
            cfg.angles.wing_b.push_back(canonicalize_angle(parse_angle_text(item)));
        }
        if (cfg.angles.wing_b.empty()) throw std::invalid_argument("empty angle list");
    });
    b.with("source.convention", [&](const std::string& v) {
        if (v == "singlet") cfg.correlated_pairs = false;
        else if (v == "correlated-pairs") cfg.correlated_pairs = true;
        else throw std::invalid_argument("unknown convention '" + v + "'");
    });

    b.with("analysis.si", [&](const std::string& v) {
        if (v == "auto") return;
        if (v == "off") {
            cfg.si_off = true;
            return;
        }
        std::vector<AnalysisSpec> specs;
        for (const auto& item : split_list(v)) {
            const std::size_t colon = item.rfind(':');
            if (colon == std::string::npos) {
                throw std::invalid_argument("expected stage:label, got '" + item + "'");
            }
            AnalysisSpec spec;
            spec.stage = stage_from_name(trim(item.substr(0, colon)));
            spec.label = label_scheme_from_name(trim(item.substr(colon + 1)));
            specs.push_back(spec);
        }
        if (specs.empty()) throw std::invalid_argument("empty si spec");
        cfg.si_specs = std::move(specs);
    });
    b.with("analysis.theory", [&](const std::string& v) {
        if (v == "auto" || v == "on") cfg.theory_test = true;
        else if (v == "off") cfg.theory_test = false;
        else throw std::invalid_argument("expected auto/on/off, got '" + v + "'");
    });
    b.with("analysis.chsh", [&](const std::string& v) {
        if (v == "auto") return;
        cfg.run_chsh = parse_bool(v);
    });
    b.with("analysis.alpha", [&](const std::string& v) {
        cfg.policy.alpha = parse_real(v);
        if (!(cfg.policy.alpha > 0.0 && cfg.policy.alpha < 1.0)) {
            throw std::invalid_argument("alpha must lie in (0, 1)");
        }
    });
    b.with("analysis.tau", [&](const std::string& v) {
        cfg.policy.tau = parse_real(v);
        if (!(cfg.policy.tau >= 0.0 && cfg.policy.tau <= 1.0)) {
            throw std::invalid_argument("tau must lie in [0, 1]");
        }
    });
    b.with("analysis.n-min",
           [&](const std::string& v) { cfg.policy.n_min = parse_u64(v); });

    b.with("output.dir", [&](const std::string& v) { cfg.out_dir = v; });
    b.with("output.log", [&](const std::string& v) { cfg.log_name = v; });
    b.with("output.report", [&](const std::string& v) { cfg.report_name = v; });
    b.with("output.csv", [&](const std::string& v) { cfg.csv_name = v; });

    // model-specific requirements
    if (cfg.model_id == "galton" && cfg.galton_mode == GaltonMode::single) {
        if (static_cast<int>(cfg.galton_ic.size()) != cfg.galton_rows) {
            b.fail(0, "galton single mode needs ic with length equal to rows");
        }
    }
    if (cfg.source_kind == SourceKind::replay_file && cfg.replay_path.empty()) {
        b.fail(0, "replay-file source needs source.replay");
    }

    ParseResult result;
    std::sort(b.errors.begin(), b.errors.end(),
              [](const ConfigError& a, const ConfigError& c) { return a.line < c.line; });
    result.errors = std::move(b.errors);
    if (result.errors.empty()) result.config = std::move(cfg);
    return result;
}

ParseResult parse_config_file(const std::string& path) {
    return parse_config(read_text_file(path));
}

std::string config_errors_to_string(const std::vector<ConfigError>& errors) {
    std::string out;
    for (const auto& e : errors) {
        out += "line " + std::to_string(e.line) + ": " + e.message + "\n";
    }
    return out;
}

// ------------------------------------------------------------ trial runner

unsigned worker_count_from_env() {
    const char* env = std::getenv("SI_BELL_SIM_THREADS");
    if (env == nullptr) return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1 || v > 256) return 1;
    return static_cast<unsigned>(v);
}

std::vector<TrialRecord> generate_trials(
    std::uint64_t n, unsigned workers,
    const std::function<TrialRecord(std::uint64_t)>& trial_fn) {
    std::vector<TrialRecord> out(n);
    if (workers <= 1 || n < 2 * workers) {
        for (std::uint64_t i = 0; i < n; ++i) out[i] = trial_fn(i);
        return out;
    }
    const std::uint64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned w = 0; w < workers; ++w) {
        const std::uint64_t begin = w * chunk;
        const std::uint64_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&, begin, end]() {
            try {
                for (std::uint64_t i = begin; i < end; ++i) out[i] = trial_fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

namespace {

SettingSource make_source(const ExperimentConfig& cfg, std::uint64_t seed) {
    SettingSource source;
    source.kind = cfg.source_kind;
    source.seed = seed;
    source.table = cfg.angles;
    if (cfg.source_kind == SourceKind::replay_file) {
        source.replay = load_replay_file(cfg.replay_path);
    }
    return source;
}

std::function<TrialRecord(std::uint64_t)> make_trial_fn(const ExperimentConfig& cfg,
                                                        std::uint64_t seed) {
    const std::string& id = cfg.model_id;
    if (id == "local-hv") {
        const SettingSource source = make_source(cfg, seed);
        return [source, seed](std::uint64_t i) { return run_local_hv(i, seed, source); };
    }
    if (id == "zigzag") {
        const SettingSource source = make_source(cfg, seed);
        const bool toggle = cfg.correlated_pairs;
        return [source, seed, toggle](std::uint64_t i) {
            return run_zigzag(i, seed, source, toggle);
        };
    }
    const JointOutcomeTable pq =
        JointOutcomeTable::from_singlet(cfg.angles, cfg.correlated_pairs);
    if (id == "goblin-1") {
        const GoblinTables tables = derive_goblin1_tables(cfg.angles, pq);
        return [tables, seed](std::uint64_t i) { return run_goblin1(tables, i, seed); };
    }
    if (id == "goblin-2") {
        const SettingSource source = make_source(cfg, seed);
        const bool dbg = cfg.debug_excluded;
        return [pq, source, seed, dbg](std::uint64_t i) {
            return run_goblin2(pq, i, seed, source, dbg);
        };
    }
    if (id == "goblin-3") {
        const bool dbg = cfg.debug_excluded;
        return [pq, seed, dbg](std::uint64_t i) { return run_goblin3(pq, i, seed, dbg); };
    }
    if (id == "all-at-once") {
        const SettingSource source = make_source(cfg, seed);
        return [pq, source, seed](std::uint64_t i) {
            return run_all_at_once(pq, i, seed, source);
        };
    }
    throw std::logic_error("no per-trial generator for model '" + id + "'");
}

struct AnalysisContext {
    AngleTable table;
    bool correlated_pairs = false;
    Policy policy;
    std::vector<AnalysisSpec> si_specs;
    bool chsh_on = false;
    bool theory_on = false;
    bool nomic_audit = false;
    bool counterfactual_audit = false;
};

std::vector<AnalysisSpec> default_si_specs(const std::string& model_id) {
    if (model_id == "zigzag") {
        return {{Stage::source_temporal, LabelScheme::wing_a},
                {Stage::causal_step_1, LabelScheme::wing_a},
                {Stage::causal_step_3, LabelScheme::wing_b}};
    }
    if (model_id == "exceptionalist-drug") {
        return {{Stage::preparation, LabelScheme::wing_a}};
    }
    if (model_id == "fluke-coin" || model_id == "fluke-entanglement") return {};
    return {{Stage::preparation, LabelScheme::joint}};
}

bool default_chsh(const std::string& model_id) {
    return model_id == "zigzag" || model_id == "local-hv" || model_id == "goblin-1" ||
           model_id == "goblin-2" || model_id == "goblin-3" ||
           model_id == "all-at-once" || model_id == "fluke-entanglement" ||
           model_id == "exceptionalist-bell";
}

AnalysisContext context_for(const std::string& arm_model_id,
                            const ExperimentConfig* cfg, const AngleTable& table,
                            const Policy& policy) {
    AnalysisContext ctx;
    ctx.table = table;
    ctx.correlated_pairs = cfg != nullptr && cfg->correlated_pairs;
    ctx.policy = policy;
    if (cfg != nullptr && cfg->si_specs.has_value()) {
        ctx.si_specs = *cfg->si_specs;
    } else if (cfg == nullptr || !cfg->si_off) {
        ctx.si_specs = default_si_specs(arm_model_id);
    }
    ctx.chsh_on = cfg != nullptr && cfg->run_chsh.has_value()
                      ? *cfg->run_chsh
                      : default_chsh(arm_model_id);
    ctx.theory_on = (cfg == nullptr || cfg->theory_test) &&
                    (arm_model_id == "fluke-coin" || arm_model_id == "fluke-entanglement");
    ctx.nomic_audit = arm_model_id == "goblin-1";
    ctx.counterfactual_audit = arm_model_id == "all-at-once";
    return ctx;
}

ordered_json policy_json(const Policy& p) {
    return {{"alpha", p.alpha}, {"tau", p.tau}, {"n_min", p.n_min}};
}

// analyze one ensemble; appends rows to csv/chsh csv buffers
ordered_json analyze_one(const Ensemble& ensemble, const AnalysisContext& ctx,
                         std::uint64_t seed, std::string* si_csv, std::string* chsh_csv,
                         int& violated, int& total) {
    ordered_json out;
    out["model"] = ensemble.meta.model_id;
    out["trials"] = ensemble.trials.size();

    const std::string prefix = std::to_string(seed) + "," + ensemble.meta.model_id + ",";
    auto append_rows = [&](std::string* buffer, const std::string& rows) {
        if (buffer == nullptr) return;
        std::size_t start = 0;
        while (start < rows.size()) {
            std::size_t end = rows.find('\n', start);
            if (end == std::string::npos) end = rows.size();
            *buffer += prefix + rows.substr(start, end - start) + "\n";
            start = end + 1;
        }
    };

    ordered_json reports = ordered_json::array();
    for (const auto& spec : ctx.si_specs) {
        const SIReport report = si_test(ensemble.trials, spec.stage, spec.label, ctx.policy);
        reports.push_back(nlohmann::ordered_json::parse(si_report_to_json(report)));
        append_rows(si_csv, si_report_csv_rows(report));
        ++total;
        if (report.verdict == Verdict::violated) ++violated;
    }
    out["si_reports"] = std::move(reports);

    if (ctx.theory_on) {
        FrequencyDistribution theory;
        if (ensemble.meta.model_id == "fluke-coin") {
            theory = FrequencyDistribution::from_probabilities(coin_theory_probabilities());
        } else {
            const JointOutcomeTable pq =
                JointOutcomeTable::from_singlet(ctx.table, ctx.correlated_pairs);
            theory = FrequencyDistribution::from_probabilities(
                entanglement_mixture_probabilities(pq));
        }
        SIReport report =
            si_test_theory(ensemble.trials, Stage::preparation, theory, ctx.policy);
        if (ensemble.meta.model_id == "fluke-entanglement") {
            report.notes.push_back(
                "mixture theory: half quantum joint, half independent uniform outcomes");
        }
        out["theory_report"] = nlohmann::ordered_json::parse(si_report_to_json(report));
        append_rows(si_csv, si_report_csv_rows(report));
        ++total;
        if (report.verdict == Verdict::violated) ++violated;
    }

    if (ctx.chsh_on) {
        const CHSHEstimate estimate = chsh(ensemble.trials, ctx.table);
        out["chsh"] = nlohmann::ordered_json::parse(chsh_to_json(estimate, ctx.table));
        append_rows(chsh_csv, chsh_csv_rows(estimate, ctx.table));
    }

    ordered_json audits;
    const CollisionAudit collisions = encoding_collision_audit(ensemble.trials);
    audits["encoding_states"] = collisions.states_checked;
    audits["encoding_collisions"] = collisions.collisions;
    if (ctx.counterfactual_audit) {
        audits["counterfactual_definiteness_fraction"] =
            counterfactual_definiteness_fraction(ensemble.trials, Stage::post_measurement);
    }
    if (ctx.nomic_audit) {
        const JointOutcomeTable pq =
            JointOutcomeTable::from_singlet(ctx.table, ctx.correlated_pairs);
        const GoblinTables tables = derive_goblin1_tables(ctx.table, pq);
        audits["nomic_exclusion_violations"] =
            nomic_exclusion_violations(ensemble.trials, tables);
    }
    out["audits"] = std::move(audits);
    return out;
}

std::string arm_log_name(const std::string& base, const std::string& arm) {
    if (arm.empty()) return base;
    const std::size_t dot = base.rfind('.');
    if (dot == std::string::npos) return base + "." + arm;
    return base.substr(0, dot) + "." + arm + base.substr(dot);
}

ordered_json branching_report(const ExperimentConfig& cfg, std::string* csv) {
    const int n = cfg.branch_n;
    const std::vector<double> weights = branch_heads_weights(n);
    ordered_json j;
    j["n"] = n;
    j["epsilon"] = cfg.branch_epsilon;
    j["branches"] = std::uint64_t{1} << n;
    j["branch_weight"] = branch_weight(n);
    j["all_heads_weight"] = weights[n];
    j["fluke_weight"] = fluke_branch_weight(n, cfg.branch_epsilon);
    ordered_json per_heads = ordered_json::array();
    for (int h = 0; h <= n; ++h) {
        per_heads.push_back({{"heads", h},
                             {"weight", weights[h]},
                             {"fluke", is_fluke_branch(h, n, cfg.branch_epsilon)}});
        if (csv != nullptr) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", weights[h]);
            *csv += std::to_string(h) + "," + buf + "," +
                    (is_fluke_branch(h, n, cfg.branch_epsilon) ? "1" : "0") + "\n";
        }
    }
    j["heads_weights"] = std::move(per_heads);
    return j;
}

ordered_json galton_report(const ExperimentConfig& cfg, std::uint64_t seed,
                           std::string* csv) {
    ordered_json j;
    j["rows"] = cfg.galton_rows;
    if (cfg.galton_mode == GaltonMode::single) {
        j["mode"] = "single";
        j["ic"] = cfg.galton_ic;
        j["box"] = run_galton_single(cfg.galton_rows, galton_ic_from_text(cfg.galton_ic));
        return j;
    }
    std::vector<std::uint64_t> boxes;
    if (cfg.galton_mode == GaltonMode::sweep_uniform) {
        j["mode"] = "sweep-uniform";
        boxes = galton_sweep_exhaustive(cfg.galton_rows);
    } else {
        j["mode"] = "sweep-sampled";
        j["samples"] = cfg.galton_samples;
        boxes = galton_sweep_sampled(cfg.galton_rows, cfg.galton_samples, seed);
    }
    double mean = 0.0;
    std::uint64_t totals = 0;
    ordered_json rows = ordered_json::array();
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        rows.push_back({{"box", k}, {"count", boxes[k]}});
        mean += static_cast<double>(k) * static_cast<double>(boxes[k]);
        totals += boxes[k];
        if (csv != nullptr) *csv += std::to_string(k) + "," + std::to_string(boxes[k]) + "\n";
    }
    j["boxes"] = std::move(rows);
    j["mean_box"] = mean / static_cast<double>(totals);
    return j;
}

}  // namespace

AngleTable infer_angle_table(std::span<const TrialRecord> trials) {
    AngleTable table;
    auto insert = [](std::vector<double>& angles, double angle) {
        const double canon = canonicalize_angle(angle);
        for (double a : angles) {
            if (std::abs(a - canon) <= kAngleTol) return;
        }
        angles.push_back(canon);
    };
    for (const auto& trial : trials) {
        if (trial.setting_a) insert(table.wing_a, trial.setting_a->angle);
        if (trial.setting_b) insert(table.wing_b, trial.setting_b->angle);
    }
    std::sort(table.wing_a.begin(), table.wing_a.end());
    std::sort(table.wing_b.begin(), table.wing_b.end());
    return table;
}

RunOutputs run_experiment(const ExperimentConfig& cfg, unsigned workers) {
    if (workers == 0) workers = worker_count_from_env();
    RunOutputs outputs;
    fs::create_directories(cfg.out_dir);
    const auto out_path = [&](const std::string& name) {
        return (fs::path(cfg.out_dir) / name).string();
    };

    ordered_json bundle;
    bundle["meta"] = {{"model", cfg.model_id},
                      {"seed", cfg.seed},
                      {"seeds", cfg.seeds},
                      {"trials", cfg.trials},
                      {"config_digest", cfg.digest}};
    ordered_json runs = ordered_json::array();
    std::string si_csv;
    std::string chsh_csv;
    std::string model_csv;  // branching/galton rows
    int violated_runs = 0;

    for (std::uint64_t k = 0; k < cfg.seeds; ++k) {
        const std::uint64_t seed = cfg.seed + k;
        const bool write_files = k == 0;
        ordered_json run;
        run["seed"] = seed;
        int run_violated = 0;
        int run_total = 0;

        if (cfg.model_id == "branching") {
            run["branching"] = branching_report(cfg, write_files ? &model_csv : nullptr);
        } else if (cfg.model_id == "galton") {
            run["galton"] = galton_report(cfg, seed, write_files ? &model_csv : nullptr);
        } else {
            std::vector<std::pair<std::string, Ensemble>> arms;  // (arm name, ensemble)
            if (cfg.model_id == "exceptionalist") {
                const JointOutcomeTable pq =
                    JointOutcomeTable::from_singlet(cfg.angles, cfg.correlated_pairs);
                ExceptionalistRun pair =
                    run_exceptionalist(cfg.trials, seed, cfg.responder_rate, pq);
                pair.drug.meta.config_digest = cfg.digest;
                pair.bell.meta.config_digest = cfg.digest;
                arms.emplace_back("drug", std::move(pair.drug));
                arms.emplace_back("bell", std::move(pair.bell));
            } else if (cfg.model_id == "fluke-coin") {
                Ensemble e = run_fluke_coin(cfg.trials, seed, cfg.fluke_condition);
                e.meta.config_digest = cfg.digest;
                arms.emplace_back("", std::move(e));
            } else if (cfg.model_id == "fluke-entanglement") {
                const JointOutcomeTable pq =
                    JointOutcomeTable::from_singlet(cfg.angles, cfg.correlated_pairs);
                Ensemble e =
                    run_fluke_entanglement(cfg.trials, seed, cfg.fluke_condition, pq);
                e.meta.config_digest = cfg.digest;
                arms.emplace_back("", std::move(e));
            } else {
                Ensemble e;
                e.meta.model_id = cfg.model_id;
                e.meta.seed = seed;
                e.meta.config_digest = cfg.digest;
                e.trials = generate_trials(cfg.trials, workers, make_trial_fn(cfg, seed));
                e.meta.trial_count = e.trials.size();
                arms.emplace_back("", std::move(e));
            }

            ordered_json arm_reports = ordered_json::array();
            for (const auto& [arm, ensemble] : arms) {
                if (write_files) {
                    const std::string path = out_path(arm_log_name(cfg.log_name, arm));
                    save_ensemble(ensemble, path);
                    outputs.files.push_back(path);
                }
                const AnalysisContext ctx =
                    context_for(ensemble.meta.model_id, &cfg, cfg.angles, cfg.policy);
                arm_reports.push_back(analyze_one(ensemble, ctx, seed, &si_csv, &chsh_csv,
                                                  run_violated, run_total));
            }
            run["arms"] = std::move(arm_reports);
        }
        run["violated_reports"] = run_violated;
        run["total_reports"] = run_total;
        outputs.violated_reports += run_violated;
        outputs.total_reports += run_total;
        if (run_violated > 0) ++violated_runs;
        runs.push_back(std::move(run));
    }
    bundle["runs"] = std::move(runs);
    if (cfg.seeds > 1) {
        bundle["aggregate"] = {
            {"runs", cfg.seeds},
            {"violated_runs", violated_runs},
            {"note",
             "alpha applies per label within each report; k labels give a per-run "
             "false-violation rate of up to k*alpha"}};
    }

    outputs.report_json = bundle.dump(2) + "\n";
    const std::string report_path = out_path(cfg.report_name);
    write_text_file(report_path, outputs.report_json);
    outputs.files.push_back(report_path);

    if (!si_csv.empty()) {
        const std::string path = out_path(cfg.csv_name);
        write_text_file(path, std::string("seed,model,") + kSiCsvHeader + "\n" + si_csv);
        outputs.files.push_back(path);
    }
    if (!chsh_csv.empty()) {
        const std::string path = out_path("chsh.csv");
        write_text_file(path, std::string("seed,model,") + kChshCsvHeader + "\n" + chsh_csv);
        outputs.files.push_back(path);
    }
    if (!model_csv.empty()) {
        const bool branching = cfg.model_id == "branching";
        const std::string path = out_path(branching ? "branches.csv" : "galton.csv");
        write_text_file(path, std::string(branching ? "heads,weight,fluke" : "box,count") +
                                  "\n" + model_csv);
        outputs.files.push_back(path);
    }
    return outputs;
}

std::string analyze_log(const Ensemble& ensemble, const Policy& policy,
                        std::string* csv_out) {
    AngleTable table = infer_angle_table(ensemble.trials);
    AnalysisContext ctx = context_for(ensemble.meta.model_id, nullptr, table, policy);
    if (!table.is_two_by_two()) ctx.chsh_on = false;
    std::string si_csv, chsh_csv;
    int violated = 0, total = 0;
    ordered_json bundle;
    bundle["meta"] = {{"model", ensemble.meta.model_id},
                      {"seed", ensemble.meta.seed},
                      {"trials", ensemble.meta.trial_count},
                      {"config_digest", ensemble.meta.config_digest}};
    bundle["analysis"] =
        analyze_one(ensemble, ctx, ensemble.meta.seed, &si_csv, &chsh_csv, violated, total);
    bundle["policy"] = policy_json(policy);
    if (csv_out != nullptr) {
        *csv_out = std::string("seed,model,") + kSiCsvHeader + "\n" + si_csv;
        if (!chsh_csv.empty()) {
            *csv_out += std::string("seed,model,") + kChshCsvHeader + "\n" + chsh_csv;
        }
    }
    return bundle.dump(2) + "\n";
}

std::vector<SweepRow> run_angle_sweep(std::span<const double> deltas,
                                      std::uint64_t trials, std::uint64_t seed,
                                      bool correlated_pairs) {
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    std::vector<SweepRow> rows;
    rows.reserve(deltas.size());
    for (double delta : deltas) {
        SettingSource source;
        source.kind = SourceKind::seeded_prng;
        source.seed = seed;
        source.table.wing_a = {0.0};
        source.table.wing_b = {canonicalize_angle(delta)};
        double sum = 0.0;
        for (std::uint64_t i = 0; i < trials; ++i) {
            const TrialRecord t = run_zigzag(i, seed, source, correlated_pairs);
            sum += outcome_value(t.outcomes->first) * outcome_value(t.outcomes->second);
        }
        SweepRow row;
        row.delta = delta;
        row.e_empirical = sum / static_cast<double>(trials);
        row.e_exact = exact_correlator(0.0, delta, correlated_pairs);
        row.n = trials;
        rows.push_back(row);
    }
    return rows;
}

namespace {

std::string format_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

void emit_plot_data(const SIReport& report, const std::string& path) {
    write_text_file(path, std::string(kSiCsvHeader) + "\n" + si_report_csv_rows(report));
}

void emit_plot_data(const CHSHEstimate& estimate, const AngleTable& table,
                    const std::string& path) {
    write_text_file(path,
                    std::string(kChshCsvHeader) + "\n" + chsh_csv_rows(estimate, table));
}

void emit_plot_data(std::span<const SweepRow> rows, const std::string& path) {
    std::string out = std::string(kSweepCsvHeader) + "\n";
    for (const auto& row : rows) {
        out += format_g(row.delta) + "," + format_g(row.e_empirical) + "," +
               format_g(row.e_exact) + "," + std::to_string(row.n) + "\n";
    }
    write_text_file(path, out);
}

}  // namespace sibell
