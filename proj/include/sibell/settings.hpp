#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sibell/core.hpp"

// Sources of apparently random setting choices, with reproducible seeding.
// All word streams are counter-based so trial generation parallelizes without
// changing output. The mixing function is the splitmix64 finalizer; the exact
// constants are documented in the README for cross-language replay.
namespace sibell {

// splitmix64 finalizer (Steele/Lea/Flood constants)
std::uint64_t mix64(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view text);

// top 53 bits -> [0, 1)
double unit_from_word(std::uint64_t w);

// word k of the seeded-prng stream: mix64(seed + (k+1) * golden gamma)
std::uint64_t prng_word(std::uint64_t seed, std::uint64_t k);
// word k of the deterministic-counter stream: mix64(seed ^ (k+1) * 0xD1B54A32D192ED03)
std::uint64_t counter_word(std::uint64_t seed, std::uint64_t k);

struct AngleTable {
    std::vector<double> wing_a;  // canonical radians
    std::vector<double> wing_b;

    static AngleTable chsh_default();  // A: 0, pi/4; B: pi/8, 3pi/8

    bool is_two_by_two() const { return wing_a.size() == 2 && wing_b.size() == 2; }
    Setting setting(Wing wing, int index) const;
    std::string joint_token(int index_a, int index_b) const;
    // "A0×B22.5" -> (0, 1); nullopt when either token is not in the table
    std::optional<std::pair<int, int>> parse_joint_token(const std::string& token) const;
    int index_of(Wing wing, double angle) const;  // -1 when absent
};

bool operator==(const AngleTable& a, const AngleTable& b);

enum class SourceKind { seeded_prng, deterministic_counter, replay_file };
std::string source_kind_name(SourceKind kind);
SourceKind source_kind_from_name(const std::string& name);

struct JointDraw {
    int index_a = 0;
    int index_b = 0;
    Setting setting_a;
    Setting setting_b;
};

// Value-semantic: advancing yields a new source. counter counts joint draws;
// prng/counter kinds consume exactly two raw words per draw, replay one token.
struct SettingSource {
    SourceKind kind = SourceKind::seeded_prng;
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
    std::vector<std::string> replay;  // joint tokens
    AngleTable table;

    SettingSource at(std::uint64_t new_counter) const;
};

std::pair<JointDraw, SettingSource> next_joint_setting(const SettingSource& source);

// Replay file: one joint token per line, '#' comments, blank lines ignored.
std::vector<std::string> parse_replay_text(const std::string& text);
std::vector<std::string> load_replay_file(const std::string& path);

// Disjoint deterministic unit-interval streams per (seed, trial, purpose),
// independent of execution order.
class RandomStream {
  public:
    RandomStream(std::uint64_t seed, std::uint64_t trial_index, std::string_view stream);

    double next();
    std::uint64_t next_word();

  private:
    std::uint64_t key_;
    std::uint64_t i_ = 0;
};

}  // namespace sibell
