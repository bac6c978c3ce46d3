#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "replan/geometry.hpp"

namespace replan {

struct AgentState {
  Pose2D pose;
  double speed = 0.0;  // m/s
};

struct AgentTrack {
  std::string id;
  double length = 4.6;  // m, footprint along heading
  double width = 2.0;   // m
  // history_len + 1 + future_len states at fixed dt; index history_len is
  // "now". Every track covers the full window — there are no partial tracks.
  std::vector<AgentState> states;

  OrientedBox box_at(int index) const {
    const AgentState& s = states.at(static_cast<std::size_t>(index));
    return {{s.pose.x, s.pose.y}, length, width, s.pose.yaw};
  }
};

// One logged scene: lane centerlines plus complete agent tracks. Ticks are
// counted relative to "now": tick t maps to state index history_len + t, so
// t ranges over [-history_len, future_len].
struct ScenarioLog {
  std::string id;
  double dt = 0.5;  // s
  int history_len = 4;
  int future_len = 12;
  double lane_half_width = 2.0;  // m
  int target_index = 0;
  std::vector<AgentTrack> tracks;
  std::vector<Polyline> lanes;

  int tick_count() const { return history_len + future_len + 1; }
  int state_index(int tick) const { return history_len + tick; }

  const AgentTrack& target() const { return tracks.at(static_cast<std::size_t>(target_index)); }

  const AgentState& state(int track, int tick) const {
    return tracks.at(static_cast<std::size_t>(track))
        .states.at(static_cast<std::size_t>(state_index(tick)));
  }

  // Ground-truth future positions of the target, ticks 1..future_len.
  std::vector<Vec2> target_future() const;
};

// Validates internal consistency (sizes, finiteness, index ranges); throws
// DataError naming the offending field.
void validate_scenario(const ScenarioLog& s);

// Applies one rigid transform (rotate by theta about the origin, then
// translate) to every lane point and agent state. Used by invariance tests.
ScenarioLog rigid_transform(const ScenarioLog& s, double tx, double ty, double theta);

enum class Profile {
  kStraight,
  kCurve,
  kMerge,
  kIntersection,
  kDenseIntersection,
};

Profile profile_from_string(const std::string& name);
std::string to_string(Profile p);

struct GeneratorConfig {
  double dt = 0.5;
  int history_len = 4;
  int future_len = 12;
  double lane_half_width = 2.0;
  double speed_lo = 4.0;   // m/s
  double speed_hi = 11.0;  // m/s
  double wobble_max = 0.25;  // m, lateral noise amplitude bound
  double clearance = 0.10;   // m, required min gap between any two footprints
  int agent_tries = 60;
  int scene_tries = 60;
};

// Deterministic: same (profile, config, seed, index) always yields the same
// scenario, independent of how many others are generated. All sampled agents
// follow lane geometry with bounded lateral wobble; ground-truth tracks are
// mutually non-colliding and the target's future stays on-road. Throws
// GenerationError if a profile's constraints cannot be met within the retry
// budget.
ScenarioLog generate_scenario(Profile profile, const GeneratorConfig& cfg, std::uint64_t seed,
                              int index);
std::vector<ScenarioLog> generate_corpus(Profile profile, const GeneratorConfig& cfg,
                                         std::uint64_t seed, int count);

// Line-delimited self-describing format (one JSON object per line, header
// first). See docs/scenario_format.md. Loading an empty file yields an empty
// corpus; any malformed line raises DataError naming the line number and the
// missing/invalid field.
void save_corpus(const std::filesystem::path& path, const std::vector<ScenarioLog>& corpus);
std::vector<ScenarioLog> load_corpus(const std::filesystem::path& path);

inline constexpr int kScenarioFormatVersion = 1;

}  // namespace replan
