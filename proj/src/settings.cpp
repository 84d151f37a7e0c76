#include "sibell/settings.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sibell {

namespace {
constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kCounterGamma = 0xD1B54A32D192ED03ULL;
constexpr std::uint64_t kStreamSalt = 0xA0761D6478BD642FULL;
}  // namespace

std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

double unit_from_word(std::uint64_t w) {
    return static_cast<double>(w >> 11) * 0x1.0p-53;
}

std::uint64_t prng_word(std::uint64_t seed, std::uint64_t k) {
    return mix64(seed + (k + 1) * kGoldenGamma);
}

std::uint64_t counter_word(std::uint64_t seed, std::uint64_t k) {
    return mix64(seed ^ ((k + 1) * kCounterGamma));
}

AngleTable AngleTable::chsh_default() {
    const double pi = std::numbers::pi;
    AngleTable t;
    t.wing_a = {0.0, pi / 4.0};
    t.wing_b = {pi / 8.0, 3.0 * pi / 8.0};
    return t;
}

Setting AngleTable::setting(Wing wing, int index) const {
    const auto& angles = wing == Wing::A ? wing_a : wing_b;
    if (index < 0 || index >= static_cast<int>(angles.size())) {
        throw std::out_of_range("setting index out of range for wing " +
                                std::string(1, wing_char(wing)));
    }
    Setting s;
    s.wing = wing;
    s.angle = canonicalize_angle(angles[index]);
    s.kind = SettingKind::binary_indexed;
    s.index = index;
    return s;
}

std::string AngleTable::joint_token(int index_a, int index_b) const {
    return setting(Wing::A, index_a).token() + "\xC3\x97" +
           setting(Wing::B, index_b).token();
}

std::optional<std::pair<int, int>> AngleTable::parse_joint_token(
    const std::string& token) const {
    const std::string cross = "\xC3\x97";
    std::size_t pos = token.find(cross);
    if (pos == std::string::npos) return std::nullopt;
    Setting a, b;
    try {
        const std::string ta = token.substr(0, pos);
        const std::string tb = token.substr(pos + cross.size());
        if (ta.empty() || tb.empty() || ta[0] != 'A' || tb[0] != 'B') return std::nullopt;
        a.wing = Wing::A;
        a.angle = angle_from_degrees_text(ta.substr(1));
        b.wing = Wing::B;
        b.angle = angle_from_degrees_text(tb.substr(1));
    } catch (const std::exception&) {
        return std::nullopt;
    }
    int ia = index_of(Wing::A, a.angle);
    int ib = index_of(Wing::B, b.angle);
    if (ia < 0 || ib < 0) return std::nullopt;
    return std::make_pair(ia, ib);
}

int AngleTable::index_of(Wing wing, double angle) const {
    const auto& angles = wing == Wing::A ? wing_a : wing_b;
    const double canon = canonicalize_angle(angle);
    for (std::size_t i = 0; i < angles.size(); ++i) {
        if (std::abs(canonicalize_angle(angles[i]) - canon) <= kAngleTol) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

bool operator==(const AngleTable& a, const AngleTable& b) {
    auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (std::abs(canonicalize_angle(x[i]) - canonicalize_angle(y[i])) > kAngleTol) {
                return false;
            }
        }
        return true;
    };
    return same(a.wing_a, b.wing_a) && same(a.wing_b, b.wing_b);
}

std::string source_kind_name(SourceKind kind) {
    switch (kind) {
        case SourceKind::seeded_prng: return "seeded-prng";
        case SourceKind::deterministic_counter: return "deterministic-counter";
        case SourceKind::replay_file: return "replay-file";
    }
    throw std::logic_error("unreachable source kind");
}

SourceKind source_kind_from_name(const std::string& name) {
    if (name == "seeded-prng") return SourceKind::seeded_prng;
    if (name == "deterministic-counter") return SourceKind::deterministic_counter;
    if (name == "replay-file") return SourceKind::replay_file;
    throw std::invalid_argument("unknown source kind '" + name + "'");
}

SettingSource SettingSource::at(std::uint64_t new_counter) const {
    SettingSource out = *this;
    out.counter = new_counter;
    return out;
}

std::pair<JointDraw, SettingSource> next_joint_setting(const SettingSource& source) {
    if (source.table.wing_a.empty() || source.table.wing_b.empty()) {
        throw std::invalid_argument("angle table must have at least one angle per wing");
    }
    JointDraw draw;
    if (source.kind == SourceKind::replay_file) {
        if (source.counter >= source.replay.size()) {
            throw std::runtime_error("entropy exhausted");
        }
        auto parsed = source.table.parse_joint_token(source.replay[source.counter]);
        if (!parsed.has_value()) {
            throw std::runtime_error("replay token '" + source.replay[source.counter] +
                                     "' not in angle table");
        }
        draw.index_a = parsed->first;
        draw.index_b = parsed->second;
    } else {
        const std::uint64_t k0 = 2 * source.counter;
        const std::uint64_t w0 = source.kind == SourceKind::seeded_prng
                                     ? prng_word(source.seed, k0)
                                     : counter_word(source.seed, k0);
        const std::uint64_t w1 = source.kind == SourceKind::seeded_prng
                                     ? prng_word(source.seed, k0 + 1)
                                     : counter_word(source.seed, k0 + 1);
        draw.index_a = static_cast<int>(w0 % source.table.wing_a.size());
        draw.index_b = static_cast<int>(w1 % source.table.wing_b.size());
    }
    draw.setting_a = source.table.setting(Wing::A, draw.index_a);
    draw.setting_b = source.table.setting(Wing::B, draw.index_b);
    return {draw, source.at(source.counter + 1)};
}

std::vector<std::string> parse_replay_text(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        std::size_t last = line.find_last_not_of(" \t\r");
        tokens.push_back(line.substr(first, last - first + 1));
    }
    return tokens;
}

std::vector<std::string> load_replay_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open replay file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_replay_text(buf.str());
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t trial_index,
                           std::string_view stream) {
    key_ = mix64(mix64(seed ^ kStreamSalt) ^ mix64(trial_index * kGoldenGamma) ^
                 fnv1a64(stream));
}

double RandomStream::next() { return unit_from_word(next_word()); }

std::uint64_t RandomStream::next_word() { return mix64(key_ + (++i_) * kGoldenGamma); }

}  // namespace sibell
