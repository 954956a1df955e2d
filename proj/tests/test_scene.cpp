#include <cmath>

#include "doctest.h"
#include "lopr/scene.hpp"

using namespace lopr;
using namespace lopr::scene;

namespace {

bool states_equal(const SceneState& a, const SceneState& b) {
  if (a.walls.size() != b.walls.size() || a.agents.size() != b.agents.size()) return false;
  for (size_t i = 0; i < a.walls.size(); ++i) {
    if (a.walls[i].a != b.walls[i].a || a.walls[i].b != b.walls[i].b) return false;
  }
  for (size_t i = 0; i < a.agents.size(); ++i) {
    const Agent &x = a.agents[i], &y = b.agents[i];
    if (x.pose.x != y.pose.x || x.pose.y != y.pose.y || x.pose.heading != y.pose.heading)
      return false;
    if (x.velocity != y.velocity || x.intent != y.intent) return false;
  }
  return a.ego.pose.x == b.ego.pose.x && a.ego.pose.y == b.ego.pose.y &&
         a.ego.pose.heading == b.ego.pose.heading;
}

}  // namespace

TEST_CASE("build_world is a pure function of archetype and seed") {
  SceneState a = build_world(Archetype::straight_road, 7);
  SceneState b = build_world(Archetype::straight_road, 7);
  CHECK(states_equal(a, b));
  SceneState c = build_world(Archetype::straight_road, 8);
  CHECK_FALSE(states_equal(a, c));
}

TEST_CASE("replays are bit-identical") {
  SceneState a = build_world(Archetype::fork, 99);
  SceneState b = build_world(Archetype::fork, 99);
  for (int k = 0; k < 25; ++k) {
    a = step(a, kFrameDt);
    b = step(b, kFrameDt);
  }
  CHECK(states_equal(a, b));
}

TEST_CASE("fork branch intents are a fair coin over seeds") {
  int upper = 0;
  const int n = 1000;
  for (int s = 0; s < n; ++s) {
    SceneState w = build_world(Archetype::fork, static_cast<std::uint64_t>(s));
    REQUIRE(w.agents.size() >= 1);
    if (w.agents[0].intent == 0) ++upper;
  }
  const double freq = static_cast<double>(upper) / n;
  CHECK(freq > 0.45);
  CHECK(freq < 0.55);
}

TEST_CASE("fork worlds realize both branches across seeds") {
  bool saw_up = false, saw_down = false;
  for (int s = 0; s < 50 && !(saw_up && saw_down); ++s) {
    SceneState w = build_world(Archetype::fork, static_cast<std::uint64_t>(s));
    for (int k = 0; k < 40; ++k) w = step(w, kFrameDt);
    if (w.agents[0].pose.y > 1.0) saw_up = true;
    if (w.agents[0].pose.y < -1.0) saw_down = true;
  }
  CHECK(saw_up);
  CHECK(saw_down);
}

TEST_CASE("intersection worlds have two crossing open corridors") {
  SceneState w = build_world(Archetype::intersection, 3);
  w.agents.clear();  // corridors are a property of the static world
  const Eigen::Vector2d origin(0.0, 0.0);
  // Open along both axes, walled on the diagonals.
  CHECK(cast_ray(w, origin, 0.0, 200.0) > 80.0);
  CHECK(cast_ray(w, origin, M_PI / 2.0, 200.0) > 80.0);
  CHECK(cast_ray(w, origin, M_PI, 200.0) > 80.0);
  CHECK(cast_ray(w, origin, -M_PI / 2.0, 200.0) > 80.0);
  CHECK(cast_ray(w, origin, M_PI / 4.0, 200.0) < 10.0);
  CHECK(cast_ray(w, origin, 3.0 * M_PI / 4.0, 200.0) < 10.0);
}

TEST_CASE("agents never overlap walls at spawn") {
  for (int arch = 0; arch < kNumArchetypes; ++arch) {
    for (int s = 0; s < 30; ++s) {
      SceneState w = build_world(static_cast<Archetype>(arch), static_cast<std::uint64_t>(s));
      for (const Agent& a : w.agents) {
        // Cast from the agent center in many directions; the nearest wall
        // must lie beyond the footprint's support radius in that direction.
        SceneState just_walls = w;
        just_walls.agents.clear();
        for (int k = 0; k < 32; ++k) {
          const double ang = k * (2.0 * M_PI / 32.0);
          const double support = std::abs(std::cos(ang - a.pose.heading)) * a.half_extents.x() +
                                 std::abs(std::sin(ang - a.pose.heading)) * a.half_extents.y();
          const double d = cast_ray(just_walls, {a.pose.x, a.pose.y}, ang, 1000.0);
          CHECK(d > support);
        }
      }
    }
  }
}

TEST_CASE("step honors velocities and the planned path") {
  SceneState w = build_world(Archetype::straight_road, 11);
  w.agents.resize(1);
  w.agents[0].pose = {0.0, 0.0, 0.0};
  w.agents[0].velocity = {0.0, 0.0};
  SceneState after = step(w, 0.1);
  CHECK(after.agents[0].pose.x == 0.0);
  CHECK(after.agents[0].pose.y == 0.0);

  w.agents[0].velocity = {1.0, 0.0};
  after = step(w, 0.1);
  CHECK(after.agents[0].pose.x == doctest::Approx(0.1));
  CHECK(after.agents[0].pose.y == 0.0);

  CHECK_THROWS_AS(step(w, 0.0), lopr::ContractError);
}

TEST_CASE("ego follows a straight 5 m/s path exactly") {
  SceneState w = build_world(Archetype::straight_road, 2);
  // Pin the plan to an exact 5 m/s straight line.
  w.ego.pose = {0.0, 0.0, 0.0};
  w.ego.velocity = {5.0, 0.0};
  for (size_t k = 0; k < w.ego.waypoints.size(); ++k) {
    w.ego.waypoints[k] = {5.0 * (static_cast<double>(k) * kFrameDt), 0.0};
  }
  SceneState cur = w;
  for (int k = 0; k < 30; ++k) cur = step(cur, 0.1);
  CHECK(std::abs(cur.ego.pose.x - 15.0) < 1e-9);
  CHECK(std::abs(cur.ego.pose.y) < 1e-12);
}

TEST_CASE("raycast geometry") {
  SceneState w;
  w.archetype = Archetype::straight_road;
  w.ego.pose = {0.0, 0.0, 0.0};
  w.ego.waypoints = {{0.0, 0.0}, {0.0, 0.0}};

  SUBCASE("empty world returns all sentinels") {
    LidarScan scan = raycast(w, 90, 30.0);
    for (double r : scan.ranges) CHECK(r == kNoReturn);
  }

  SUBCASE("wall at x=10 straight ahead") {
    w.walls.push_back({{10.0, -5.0}, {10.0, 5.0}});
    CHECK(cast_ray(w, {0.0, 0.0}, 0.0, 30.0) == doctest::Approx(10.0).epsilon(1e-12));
  }

  SUBCASE("nearer of two collinear walls occludes") {
    w.walls.push_back({{10.0, -5.0}, {10.0, 5.0}});
    w.walls.push_back({{5.0, -5.0}, {5.0, 5.0}});
    CHECK(cast_ray(w, {0.0, 0.0}, 0.0, 30.0) == doctest::Approx(5.0).epsilon(1e-12));
  }

  SUBCASE("angles are strictly increasing over [-pi, pi)") {
    LidarScan scan = raycast(w, 360, 30.0);
    CHECK(scan.angles.front() >= -M_PI);
    CHECK(scan.angles.back() < M_PI);
    for (size_t i = 1; i < scan.angles.size(); ++i) CHECK(scan.angles[i] > scan.angles[i - 1]);
  }
}

TEST_CASE("ranges are monotone under obstacle insertion") {
  lopr::RandomStream rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    SceneState w = build_world(Archetype::straight_road, static_cast<std::uint64_t>(trial));
    LidarScan before = raycast(w, 180, 30.0);
    SceneState more = w;
    const double x = rng.uniform(-15.0, 15.0), y = rng.uniform(-4.0, 4.0);
    const double dx = rng.uniform(-3.0, 3.0), dy = rng.uniform(-3.0, 3.0);
    more.walls.push_back({{x, y}, {x + dx, y + dy}});
    LidarScan after = raycast(more, 180, 30.0);
    for (int i = 0; i < 180; ++i) {
      const double rb = std::isfinite(before.ranges[i]) ? before.ranges[i] : 1e18;
      const double ra = std::isfinite(after.ranges[i]) ? after.ranges[i] : 1e18;
      CHECK(ra <= rb + 1e-12);
    }
  }
}

TEST_CASE("render_map aligns the drivable band with the ego frame") {
  SceneState w = build_world(Archetype::straight_road, 21);
  ogm::GridSpec spec;
  ogm::MapRaster m = render_map(w, spec);

  // Heading +x: the road runs along the forward axis, so the drivable
  // pattern is a function of the column only (the band is aligned with the
  // raster's forward axis; road ends are far outside the grid).
  for (int j = 0; j < spec.w; ++j) {
    for (int i = 1; i < spec.h; ++i) CHECK(m.at(0, i, j) == m.at(0, 0, j));
  }
  int drivable_cols = 0;
  for (int j = 0; j < spec.w; ++j) drivable_cols += m.at(0, 0, j);
  CHECK(drivable_cols > 0);
  CHECK(drivable_cols < spec.w);

  // Rotating the ego by 90 degrees rotates the raster content.
  SceneState rot = w;
  rot.ego.pose.heading += M_PI / 2.0;
  ogm::MapRaster mr = render_map(rot, spec);
  for (int i = 0; i < spec.h; ++i)
    for (int j = 0; j < spec.w; ++j) {
      CHECK(mr.at(0, i, j) == m.at(0, spec.h - 1 - j, i));
    }
}

TEST_CASE("drivable fraction is invariant to translation along the road") {
  SceneState w = build_world(Archetype::straight_road, 33);
  ogm::GridSpec spec;
  auto fraction = [&](const SceneState& s) {
    ogm::MapRaster m = render_map(s, spec);
    int n = 0;
    for (int i = 0; i < spec.h; ++i)
      for (int j = 0; j < spec.w; ++j) n += m.at(0, i, j);
    return static_cast<double>(n) / (spec.h * spec.w);
  };
  const double f0 = fraction(w);
  for (double shift : {3.0, 7.5, 12.25}) {
    SceneState s = w;
    s.ego.pose.x += shift;
    CHECK(std::abs(fraction(s) - f0) < 0.02);
  }
}

TEST_CASE("planned trajectory starts at the origin and matches speed") {
  SceneState w = build_world(Archetype::straight_road, 44);
  PlannedTrajectory traj = planned_trajectory(w, 20);
  REQUIRE(traj.positions.size() == 20);
  CHECK(traj.positions[0][0] == 0.0);
  CHECK(traj.positions[0][1] == 0.0);
  CHECK(traj.positions[0][2] == 0.0);
  const double speed = w.ego.velocity.norm();
  const double step_len = std::hypot(traj.positions[1][0] - traj.positions[0][0],
                                     traj.positions[1][1] - traj.positions[0][1]);
  CHECK(step_len == doctest::Approx(speed * kFrameDt).epsilon(1e-9));
  for (const auto& p : traj.positions) CHECK(p[2] == 0.0);
}
