#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "lopr/grid.hpp"
#include "lopr/random.hpp"

namespace lopr::scene {

inline constexpr double kNoReturn = std::numeric_limits<double>::infinity();
inline constexpr double kFrameDt = 0.1;  // 10 Hz

struct Pose {
  double x = 0.0, y = 0.0, heading = 0.0;
};

struct Segment {
  Eigen::Vector2d a, b;
};

struct Agent {
  Eigen::Vector2d half_extents;  // rectangle footprint, meters
  Pose pose;
  Eigen::Vector2d velocity;  // m/s, world frame
  int intent = 0;            // fork branch selector
  bool gated = false;        // branch behavior already applied
};

// Ego motion is a straight constant-speed line; the planned path is stored
// as explicit waypoints at the frame rate so consumers never re-derive it.
struct EgoState {
  Pose pose;
  Eigen::Vector2d velocity;
  std::vector<Eigen::Vector2d> waypoints;  // position at k * kFrameDt
  double waypoint_dt = kFrameDt;
};

enum class Archetype : int { straight_road = 0, intersection = 1, fork = 2 };
inline constexpr int kNumArchetypes = 3;
const char* archetype_name(Archetype a);
Archetype archetype_from_name(const std::string& name);

struct SceneState {
  Archetype archetype = Archetype::straight_road;
  std::uint64_t seed = 0;
  double time = 0.0;
  std::vector<Segment> walls;
  std::vector<Agent> agents;
  EgoState ego;
  // fork geometry (valid when archetype == fork)
  double fork_gate_x = 0.0;
  double fork_branch_angle = 0.0;
};

struct LidarScan {
  int n_beams = 0;
  double max_range = 0.0;
  std::vector<double> angles;  // ego frame, strictly increasing over [-pi, pi)
  std::vector<double> ranges;  // meters; kNoReturn when nothing within range
};

struct PlannedTrajectory {
  // T x 3 positions (x, y, z), z fixed 0, in the ego frame at the first
  // step; the first position is the origin.
  std::vector<std::array<double, 3>> positions;
};

// Deterministic function of (archetype, seed). Fork worlds spawn at least
// one agent whose branch intent is a fair coin flip; the choice has no
// observable effect until the agent reaches the gate.
SceneState build_world(Archetype archetype, std::uint64_t seed);

// Same world with the fork agent's intent forced; used to locate branch
// end regions when classifying predictions.
SceneState build_world_with_intent(Archetype archetype, std::uint64_t seed, int intent);

SceneState step(const SceneState& state, double dt);

// Nearest intersection along one world-frame ray, or kNoReturn.
double cast_ray(const SceneState& state, const Eigen::Vector2d& origin,
                double world_angle, double max_range);

// Beam angles are offset half a step so no beam lies exactly on the frame
// axes: angles[i] = -pi + (i + 0.5) * 2*pi/n.
LidarScan raycast(const SceneState& state, int n_beams, double max_range);

ogm::MapRaster render_map(const SceneState& state, const ogm::GridSpec& spec);

PlannedTrajectory planned_trajectory(const SceneState& state, int steps);

// Ego pose at (state.time + k * kFrameDt) without stepping agents.
Pose ego_pose_at(const SceneState& state, int steps_ahead);

// World point -> ego frame of `pose`.
inline Eigen::Vector2d to_ego_frame(const Pose& pose, const Eigen::Vector2d& p) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  const double dx = p.x() - pose.x, dy = p.y() - pose.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Eigen::Vector2d to_world_frame(const Pose& pose, const Eigen::Vector2d& p) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {pose.x + c * p.x() - s * p.y(), pose.y + s * p.x() + c * p.y()};
}

}  // namespace lopr::scene
