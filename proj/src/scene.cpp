#include "lopr/scene.hpp"

#include <cmath>

#include "lopr/errors.hpp"

namespace lopr::scene {

namespace {

constexpr double kRoadHalfWidth = 4.7;
constexpr double kRoadExtent = 90.0;
constexpr double kLaneOffset = 2.35;
constexpr double kBranchAngle = 0.3839724354387525;  // 22 degrees
constexpr double kCarHalfLength = 2.25;
constexpr double kCarHalfWidth = 1.0;
constexpr int kPlanFrames = 600;

double branch_tan() { return std::tan(kBranchAngle); }

void plan_straight_path(EgoState& ego, double speed) {
  ego.velocity = speed * Eigen::Vector2d(std::cos(ego.pose.heading), std::sin(ego.pose.heading));
  ego.waypoints.resize(kPlanFrames);
  for (int k = 0; k < kPlanFrames; ++k) {
    const double t = k * ego.waypoint_dt;
    ego.waypoints[static_cast<size_t>(k)] =
        Eigen::Vector2d(ego.pose.x, ego.pose.y) + t * ego.velocity;
  }
}

Eigen::Vector2d ego_position_at_time(const EgoState& ego, double t) {
  if (t <= 0.0) return ego.waypoints.front();
  const double idx = t / ego.waypoint_dt;
  const int k = static_cast<int>(std::floor(idx));
  if (k >= static_cast<int>(ego.waypoints.size()) - 1) return ego.waypoints.back();
  const double frac = idx - k;
  return (1.0 - frac) * ego.waypoints[static_cast<size_t>(k)] +
         frac * ego.waypoints[static_cast<size_t>(k) + 1];
}

Agent make_car(double x, double y, double heading, double speed, int intent = 0) {
  Agent a;
  a.half_extents = {kCarHalfLength, kCarHalfWidth};
  a.pose = {x, y, heading};
  a.velocity = speed * Eigen::Vector2d(std::cos(heading), std::sin(heading));
  a.intent = intent;
  return a;
}

void build_straight_road(SceneState& s, RandomStream& rng) {
  s.walls.push_back({{-kRoadExtent, -kRoadHalfWidth}, {kRoadExtent, -kRoadHalfWidth}});
  s.walls.push_back({{-kRoadExtent, kRoadHalfWidth}, {kRoadExtent, kRoadHalfWidth}});

  s.ego.pose = {-20.0 + rng.uniform(-2.0, 2.0), -kLaneOffset, 0.0};
  plan_straight_path(s.ego, rng.uniform(4.0, 6.0));

  const int n_agents = 1 + static_cast<int>(rng.uniform_int(0, 2));
  for (int i = 0; i < n_agents; ++i) {
    const bool oncoming = rng.bernoulli(0.5);
    const double speed = rng.uniform(3.0, 7.0);
    if (oncoming) {
      const double x = s.ego.pose.x + rng.uniform(14.0, 38.0);
      s.agents.push_back(make_car(x, kLaneOffset, M_PI, speed));
    } else {
      const double x = s.ego.pose.x + rng.uniform(7.0, 26.0) + i * 8.0;
      s.agents.push_back(make_car(x, -kLaneOffset, 0.0, speed));
    }
  }
}

void build_intersection(SceneState& s, RandomStream& rng) {
  const double r = kRoadHalfWidth;
  const double e = kRoadExtent;
  // Four corner Ls around two crossing corridors.
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      s.walls.push_back({{sx * r, sy * r}, {sx * e, sy * r}});
      s.walls.push_back({{sx * r, sy * r}, {sx * r, sy * e}});
    }
  }

  s.ego.pose = {-25.0 + rng.uniform(-2.0, 2.0), -kLaneOffset, 0.0};
  plan_straight_path(s.ego, rng.uniform(4.0, 6.0));

  const int n_cross = 1 + static_cast<int>(rng.uniform_int(0, 1));
  for (int i = 0; i < n_cross; ++i) {
    const bool from_north = rng.bernoulli(0.5);
    const double speed = rng.uniform(3.0, 6.0);
    const double dist = rng.uniform(8.0, 26.0) + i * 9.0;
    if (from_north) {
      s.agents.push_back(make_car(kLaneOffset, dist, -M_PI / 2.0, speed));
    } else {
      s.agents.push_back(make_car(-kLaneOffset, -dist, M_PI / 2.0, speed));
    }
  }
  if (rng.bernoulli(0.5)) {
    const double x = s.ego.pose.x + rng.uniform(8.0, 14.0);
    s.agents.push_back(make_car(x, -kLaneOffset, 0.0, rng.uniform(3.5, 5.5)));
  }
}

void build_fork(SceneState& s, RandomStream& rng, int forced_intent) {
  const double t = branch_tan();
  const double r = kRoadHalfWidth;
  const double e = kRoadExtent;
  const double tip_x = r / t;
  s.fork_gate_x = 0.0;
  s.fork_branch_angle = kBranchAngle;

  s.walls.push_back({{-e, -r}, {0.0, -r}});
  s.walls.push_back({{-e, r}, {0.0, r}});
  s.walls.push_back({{0.0, r}, {e, r + e * t}});       // outer upper
  s.walls.push_back({{0.0, -r}, {e, -r - e * t}});     // outer lower
  s.walls.push_back({{tip_x, 0.0}, {e, e * t - r}});   // inner upper
  s.walls.push_back({{tip_x, 0.0}, {e, -e * t + r}});  // inner lower

  s.ego.pose = {-16.0 + rng.uniform(-1.0, 1.0), -kLaneOffset, 0.0};
  plan_straight_path(s.ego, rng.uniform(4.0, 5.5));

  const int intent = forced_intent >= 0 ? forced_intent : (rng.bernoulli(0.5) ? 1 : 0);
  const double x = -7.0 + rng.uniform(-1.5, 1.5);
  const double y = rng.uniform(-1.1, 1.1);
  s.agents.push_back(make_car(x, y, 0.0, rng.uniform(4.5, 6.0), intent));
}

SceneState build_impl(Archetype archetype, std::uint64_t seed, int forced_intent) {
  SceneState s;
  s.archetype = archetype;
  s.seed = seed;
  RandomStream rng = RandomStream::derive(seed, static_cast<std::uint64_t>(archetype));
  switch (archetype) {
    case Archetype::straight_road:
      build_straight_road(s, rng);
      break;
    case Archetype::intersection:
      build_intersection(s, rng);
      break;
    case Archetype::fork:
      build_fork(s, rng, forced_intent);
      break;
  }
  return s;
}

void rect_segments(const Agent& a, Segment out[4]) {
  const double c = std::cos(a.pose.heading), sn = std::sin(a.pose.heading);
  const double hx = a.half_extents.x(), hy = a.half_extents.y();
  const Eigen::Vector2d center(a.pose.x, a.pose.y);
  const Eigen::Vector2d corners[4] = {
      center + Eigen::Vector2d(c * hx - sn * hy, sn * hx + c * hy),
      center + Eigen::Vector2d(c * hx + sn * hy, sn * hx - c * hy),
      center + Eigen::Vector2d(-c * hx + sn * hy, -sn * hx - c * hy),
      center + Eigen::Vector2d(-c * hx - sn * hy, -sn * hx + c * hy),
  };
  out[0] = {corners[0], corners[1]};
  out[1] = {corners[1], corners[2]};
  out[2] = {corners[2], corners[3]};
  out[3] = {corners[3], corners[0]};
}

double ray_segment(const Eigen::Vector2d& origin, const Eigen::Vector2d& dir,
                   const Segment& seg) {
  const Eigen::Vector2d e = seg.b - seg.a;
  const double denom = dir.x() * e.y() - dir.y() * e.x();
  if (std::abs(denom) < 1e-15) return kNoReturn;
  const Eigen::Vector2d ao = seg.a - origin;
  const double t = (ao.x() * e.y() - ao.y() * e.x()) / denom;
  const double u = (ao.x() * dir.y() - ao.y() * dir.x()) / denom;
  if (t > 1e-9 && u >= 0.0 && u <= 1.0) return t;
  return kNoReturn;
}

bool is_drivable(const SceneState& s, double wx, double wy) {
  switch (s.archetype) {
    case Archetype::straight_road:
      return std::abs(wy) <= kRoadHalfWidth && std::abs(wx) <= kRoadExtent;
    case Archetype::intersection:
      return (std::abs(wy) <= kRoadHalfWidth && std::abs(wx) <= kRoadExtent) ||
             (std::abs(wx) <= kRoadHalfWidth && std::abs(wy) <= kRoadExtent);
    case Archetype::fork: {
      if (wx <= 0.0) return wx >= -kRoadExtent && std::abs(wy) <= kRoadHalfWidth;
      if (wx > kRoadExtent) return false;
      const double c = wx * branch_tan();
      return std::abs(wy - c) <= kRoadHalfWidth || std::abs(wy + c) <= kRoadHalfWidth;
    }
  }
  return false;
}

bool is_stop_line(const SceneState& s, double wx, double wy) {
  switch (s.archetype) {
    case Archetype::intersection:
      return wx >= -6.8 && wx <= -6.2 && std::abs(wy) <= kRoadHalfWidth;
    case Archetype::fork:
      return wx >= -1.4 && wx <= -0.8 && std::abs(wy) <= kRoadHalfWidth;
    default:
      return false;
  }
}

bool is_crossing(const SceneState& s, double wx, double wy) {
  if (s.archetype != Archetype::intersection) return false;
  return std::abs(wx) <= kRoadHalfWidth &&
         ((wy >= 5.3 && wy <= 6.5) || (wy >= -6.5 && wy <= -5.3));
}

}  // namespace

const char* archetype_name(Archetype a) {
  switch (a) {
    case Archetype::straight_road: return "straight_road";
    case Archetype::intersection: return "intersection";
    case Archetype::fork: return "fork";
  }
  return "unknown";
}

Archetype archetype_from_name(const std::string& name) {
  if (name == "straight_road") return Archetype::straight_road;
  if (name == "intersection") return Archetype::intersection;
  if (name == "fork") return Archetype::fork;
  throw ContractError("unknown archetype '" + name + "'");
}

SceneState build_world(Archetype archetype, std::uint64_t seed) {
  return build_impl(archetype, seed, -1);
}

SceneState build_world_with_intent(Archetype archetype, std::uint64_t seed, int intent) {
  return build_impl(archetype, seed, intent);
}

SceneState step(const SceneState& state, double dt) {
  if (!(dt > 0.0)) throw ContractError("step requires dt > 0");
  SceneState ns = state;
  ns.time = state.time + dt;
  for (Agent& a : ns.agents) {
    a.pose.x += a.velocity.x() * dt;
    a.pose.y += a.velocity.y() * dt;
    if (ns.archetype == Archetype::fork && !a.gated && a.pose.x >= ns.fork_gate_x) {
      const double speed = a.velocity.norm();
      if (speed > 0.0) {
        const double dir = a.intent == 0 ? ns.fork_branch_angle : -ns.fork_branch_angle;
        a.velocity = speed * Eigen::Vector2d(std::cos(dir), std::sin(dir));
        a.pose.heading = dir;
        a.gated = true;
      }
    }
  }
  const Eigen::Vector2d p = ego_position_at_time(ns.ego, ns.time);
  ns.ego.pose.x = p.x();
  ns.ego.pose.y = p.y();
  return ns;
}

double cast_ray(const SceneState& state, const Eigen::Vector2d& origin,
                double world_angle, double max_range) {
  const Eigen::Vector2d dir(std::cos(world_angle), std::sin(world_angle));
  double best = kNoReturn;
  for (const Segment& seg : state.walls) {
    best = std::min(best, ray_segment(origin, dir, seg));
  }
  Segment edges[4];
  for (const Agent& a : state.agents) {
    rect_segments(a, edges);
    for (const Segment& seg : edges) best = std::min(best, ray_segment(origin, dir, seg));
  }
  return best <= max_range ? best : kNoReturn;
}

LidarScan raycast(const SceneState& state, int n_beams, double max_range) {
  if (n_beams < 1) throw ContractError("raycast requires n_beams >= 1");
  LidarScan scan;
  scan.n_beams = n_beams;
  scan.max_range = max_range;
  scan.angles.resize(static_cast<size_t>(n_beams));
  // Beam i pairs with beam n-1-i as an exact negation, so a left-right
  // mirrored scene produces a bit-mirrored scan.
  for (int i = 0; i < n_beams / 2; ++i) {
    const double a = -M_PI + (i + 0.5) * (2.0 * M_PI / n_beams);
    scan.angles[static_cast<size_t>(i)] = a;
    scan.angles[static_cast<size_t>(n_beams - 1 - i)] = -a;
  }
  if (n_beams % 2 == 1) scan.angles[static_cast<size_t>(n_beams / 2)] = 0.0;
  scan.ranges.resize(static_cast<size_t>(n_beams));
  const Eigen::Vector2d origin(state.ego.pose.x, state.ego.pose.y);
  for (int i = 0; i < n_beams; ++i) {
    scan.ranges[static_cast<size_t>(i)] = cast_ray(
        state, origin, state.ego.pose.heading + scan.angles[static_cast<size_t>(i)],
        max_range);
  }
  return scan;
}

ogm::MapRaster render_map(const SceneState& state, const ogm::GridSpec& spec) {
  ogm::MapRaster raster(spec.h, spec.w);
  const Pose& pose = state.ego.pose;
  for (int i = 0; i < spec.h; ++i) {
    for (int j = 0; j < spec.w; ++j) {
      const Eigen::Vector2d w = to_world_frame(
          pose, {ogm::cell_center_x(spec, i), ogm::cell_center_y(spec, j)});
      if (is_drivable(state, w.x(), w.y())) raster.at(0, i, j) = 1;
      if (is_stop_line(state, w.x(), w.y())) raster.at(1, i, j) = 1;
      if (is_crossing(state, w.x(), w.y())) raster.at(2, i, j) = 1;
    }
  }
  return raster;
}

PlannedTrajectory planned_trajectory(const SceneState& state, int steps) {
  if (steps < 1) throw ContractError("planned_trajectory requires steps >= 1");
  PlannedTrajectory traj;
  traj.positions.resize(static_cast<size_t>(steps));
  const Eigen::Vector2d base = ego_position_at_time(state.ego, state.time);
  const double c = std::cos(state.ego.pose.heading), s = std::sin(state.ego.pose.heading);
  for (int k = 0; k < steps; ++k) {
    const Eigen::Vector2d p =
        ego_position_at_time(state.ego, state.time + k * kFrameDt) - base;
    traj.positions[static_cast<size_t>(k)] = {c * p.x() + s * p.y(),
                                              -s * p.x() + c * p.y(), 0.0};
  }
  return traj;
}

Pose ego_pose_at(const SceneState& state, int steps_ahead) {
  Pose p = state.ego.pose;
  const Eigen::Vector2d pos =
      ego_position_at_time(state.ego, state.time + steps_ahead * kFrameDt);
  p.x = pos.x();
  p.y = pos.y();
  return p;
}

}  // namespace lopr::scene
