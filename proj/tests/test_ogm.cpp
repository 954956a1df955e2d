#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "lopr/dataset.hpp"
#include "lopr/ogm.hpp"
#include "lopr/random.hpp"
#include "lopr/scene.hpp"

using namespace lopr;
using namespace lopr::ogm;

namespace {

scene::LidarScan all_sentinel_scan(int n_beams, double max_range) {
  scene::LidarScan scan;
  scan.n_beams = n_beams;
  scan.max_range = max_range;
  scan.angles.resize(static_cast<size_t>(n_beams));
  scan.ranges.assign(static_cast<size_t>(n_beams), scene::kNoReturn);
  for (int i = 0; i < n_beams; ++i) {
    scan.angles[static_cast<size_t>(i)] = -M_PI + (i + 0.5) * (2.0 * M_PI / n_beams);
  }
  return scan;
}

SequenceSample random_sample(RandomStream& rng, const GridSpec& spec, int t_total) {
  SequenceSample s;
  s.sequence_id = rng.next_u64();
  s.t_obs = 5;
  s.t_fut = t_total - 5;
  s.location_id = static_cast<int>(rng.uniform_int(0, 2));
  for (int t = 0; t < t_total; ++t) {
    OccupancyGrid g(spec);
    for (double& v : g.values) v = static_cast<double>(static_cast<float>(rng.uniform()));
    s.grids.push_back(std::move(g));
  }
  MapRaster m(spec.h, spec.w);
  for (auto& b : m.data) b = rng.bernoulli(0.3) ? 1 : 0;
  s.maps.push_back(std::move(m));
  s.trajectory.positions.resize(static_cast<size_t>(t_total));
  s.trajectory.positions[0] = {0.0, 0.0, 0.0};
  for (int t = 1; t < t_total; ++t) {
    s.trajectory.positions[static_cast<size_t>(t)] = {rng.gaussian(), rng.gaussian(), 0.0};
  }
  s.ego_poses.resize(static_cast<size_t>(t_total));
  for (auto& p : s.ego_poses) p = {rng.gaussian(), rng.gaussian(), rng.uniform(-3.0, 3.0)};
  return s;
}

}  // namespace

TEST_CASE("all-sentinel scan frees beam cells and leaves the rest unknown") {
  GridSpec spec;
  scene::LidarScan scan = all_sentinel_scan(360, 30.0);
  OccupancyGrid g = scan_to_grid(scan, spec);
  int n_free = 0, n_unknown = 0, n_occ = 0;
  for (double v : g.values) {
    if (v < 0.5) ++n_free;
    else if (v == 0.5) ++n_unknown;
    else ++n_occ;
  }
  CHECK(n_occ == 0);
  CHECK(n_free > 10000);  // most of the disc within max_range
  CHECK(n_unknown > 0);   // grid corners lie beyond max_range

  // Cells along the +x beam direction near the sensor are free; corners
  // beyond 30 m stay at the prior.
  CHECK(g.at(spec.h / 2 - 10, spec.w / 2) < 0.5);
  CHECK(g.at(0, 0) == 0.5);
}

TEST_CASE("single-range scan: hit cell decisive, path free, shadow untouched") {
  // Every beam returns at 10 m, so cells on the +x ray pick up several free
  // updates from adjacent beams before the hit.
  GridSpec spec;
  scene::LidarScan scan = all_sentinel_scan(360, 30.0);
  for (double& r : scan.ranges) r = 10.0;
  OccupancyGrid g = scan_to_grid(scan, spec);

  int hi, hj;
  REQUIRE(cell_of(spec, 10.0 * std::cos(scan.angles[180]), 10.0 * std::sin(scan.angles[180]),
                  hi, hj));
  CHECK(g.at(hi, hj) > 0.9);

  // Preceding cells on that ray (skip the immediate neighborhood of the hit
  // cell) are decisively free.
  for (double d = 1.0; d < 9.0; d += 0.5) {
    int i, j;
    REQUIRE(cell_of(spec, d * std::cos(scan.angles[180]), d * std::sin(scan.angles[180]), i, j));
    CHECK(g.at(i, j) < 0.1);
  }
  // Beyond the return: untouched.
  for (double d = 11.0; d < 20.0; d += 0.5) {
    int i, j;
    REQUIRE(cell_of(spec, d * std::cos(scan.angles[180]), d * std::sin(scan.angles[180]), i, j));
    CHECK(g.at(i, j) == 0.5);
  }
}

TEST_CASE("occlusion preservation: no information beyond the first return") {
  GridSpec spec;
  scene::LidarScan scan = all_sentinel_scan(180, 30.0);
  for (double& r : scan.ranges) r = 6.0;
  OccupancyGrid g = scan_to_grid(scan, spec);
  for (int i = 0; i < spec.h; ++i)
    for (int j = 0; j < spec.w; ++j) {
      const double cx = cell_center_x(spec, i), cy = cell_center_y(spec, j);
      if (std::hypot(cx, cy) > 6.0 + 2.0 * spec.resolution) CHECK(g.at(i, j) == 0.5);
    }
}

TEST_CASE("symmetric scene gives a mirror-symmetric grid") {
  // Walls at x = +-10 crossing the x-axis; mirror symmetry is about y.
  // Each wall is split at y=0 so the two halves are structural mirror
  // images of each other.
  scene::SceneState w;
  w.archetype = scene::Archetype::straight_road;
  w.ego.pose = {0.0, 0.0, 0.0};
  w.ego.waypoints = {{0.0, 0.0}, {0.0, 0.0}};
  for (double wx : {10.0, -10.0}) {
    w.walls.push_back({{wx, 0.0}, {wx, 8.0}});
    w.walls.push_back({{wx, 0.0}, {wx, -8.0}});
  }

  GridSpec spec;
  scene::LidarScan scan = scene::raycast(w, 360, 30.0);
  OccupancyGrid g = scan_to_grid(scan, spec);
  for (int i = 0; i < spec.h; ++i)
    for (int j = 0; j < spec.w; ++j)
      CHECK(std::abs(g.at(i, j) - g.at(i, spec.w - 1 - j)) < 1e-12);
}

TEST_CASE("probabilities stay inside [0,1] under heavy accumulation") {
  GridSpec spec;
  scene::LidarScan scan = all_sentinel_scan(1440, 30.0);
  for (size_t i = 0; i < scan.ranges.size(); i += 2) scan.ranges[i] = 4.0;
  OccupancyGrid g = scan_to_grid(scan, spec);
  for (double v : g.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // clamped extremes map to 1/(1+e^:-6)
  const double pmax = 1.0 / (1.0 + std::exp(-6.0));
  for (double v : g.values) CHECK(v <= pmax + 1e-12);
}

TEST_CASE("ternarize thresholds and idempotence") {
  GridSpec spec{2, 2, 1.0};
  OccupancyGrid g(spec);
  g.values = {0.9, 0.1, 0.5, 0.5};
  TernaryGrid t = ternarize(g, 0.65, 0.35);
  CHECK(t.values[0] == Ternary::Occupied);
  CHECK(t.values[1] == Ternary::Free);
  CHECK(t.values[2] == Ternary::Occluded);

  OccupancyGrid uniform(spec);
  TernaryGrid tu = ternarize(uniform);
  for (auto v : tu.values) CHECK(v == Ternary::Occluded);

  // idempotent via the {1, 0, 0.5} embedding
  TernaryGrid t2 = ternarize(ternary_to_grid(t, spec));
  CHECK(t2 == t);

  CHECK_THROWS_AS(ternarize(g, 0.35, 0.65), ContractError);
}

TEST_CASE("augmentations: identity, involutions, group identities") {
  RandomStream rng(7);
  GridSpec spec{16, 16, 0.5};
  SequenceSample s = random_sample(rng, spec, 8);

  SequenceSample id = apply_augmentation(s, AugmentationKind::identity);
  CHECK(id.aug_id == 0);
  for (int t = 0; t < 8; ++t) CHECK(id.grids[t].values == s.grids[t].values);

  SequenceSample mm = apply_augmentation(apply_augmentation(s, AugmentationKind::mirror_lr),
                                         AugmentationKind::mirror_lr);
  for (int t = 0; t < 8; ++t) CHECK(mm.grids[t].values == s.grids[t].values);
  CHECK(mm.maps[0].data == s.maps[0].data);
  for (size_t k = 0; k < s.trajectory.positions.size(); ++k) {
    CHECK(mm.trajectory.positions[k] == s.trajectory.positions[k]);
  }

  SequenceSample r4 = s;
  for (int k = 0; k < 4; ++k) r4 = apply_augmentation(r4, AugmentationKind::rotate_90);
  for (int t = 0; t < 8; ++t) CHECK(r4.grids[t].values == s.grids[t].values);
  CHECK(r4.maps[0].data == s.maps[0].data);
  for (size_t k = 0; k < s.trajectory.positions.size(); ++k) {
    CHECK(r4.trajectory.positions[k] == s.trajectory.positions[k]);
  }

  // rotate_180 equals rotate_90 twice
  SequenceSample r90twice = apply_augmentation(apply_augmentation(s, AugmentationKind::rotate_90),
                                               AugmentationKind::rotate_90);
  SequenceSample r180 = apply_augmentation(s, AugmentationKind::rotate_180);
  for (int t = 0; t < 8; ++t) CHECK(r90twice.grids[t].values == r180.grids[t].values);

  // time_reverse flips order and is an involution on grids
  SequenceSample tr = apply_augmentation(s, AugmentationKind::time_reverse);
  CHECK(tr.grids[0].values == s.grids[7].values);
  CHECK(tr.trajectory.positions[0][0] == 0.0);
  CHECK(tr.trajectory.positions[0][1] == 0.0);
  SequenceSample trtr = apply_augmentation(tr, AugmentationKind::time_reverse);
  for (int t = 0; t < 8; ++t) CHECK(trtr.grids[t].values == s.grids[t].values);
}

TEST_CASE("augmentation bijection property on randomized samples") {
  RandomStream rng(13);
  GridSpec spec{8, 8, 0.5};
  for (int trial = 0; trial < 100; ++trial) {
    SequenceSample s = random_sample(rng, spec, 4);
    SequenceSample a = apply_augmentation(apply_augmentation(s, AugmentationKind::mirror_lr),
                                          AugmentationKind::mirror_lr);
    SequenceSample b = s;
    for (int k = 0; k < 4; ++k) b = apply_augmentation(b, AugmentationKind::rotate_90);
    for (int t = 0; t < 4; ++t) {
      CHECK(a.grids[t].values == s.grids[t].values);
      CHECK(b.grids[t].values == s.grids[t].values);
    }
  }
}

TEST_CASE("dataset round trip is bit-exact") {
  RandomStream rng(19);
  GridSpec spec{16, 16, 0.25};
  std::vector<SequenceSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(random_sample(rng, spec, 6));
  const std::string path = "test_dataset.bin";
  write_dataset(samples, path);
  auto loaded = read_dataset(path);
  REQUIRE(loaded.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].sequence_id == samples[i].sequence_id);
    CHECK(loaded[i].t_obs == samples[i].t_obs);
    CHECK(loaded[i].location_id == samples[i].location_id);
    REQUIRE(loaded[i].grids.size() == samples[i].grids.size());
    for (size_t t = 0; t < samples[i].grids.size(); ++t) {
      CHECK(loaded[i].grids[t].values == samples[i].grids[t].values);
    }
    CHECK(loaded[i].maps[0].data == samples[i].maps[0].data);
    for (size_t k = 0; k < samples[i].trajectory.positions.size(); ++k) {
      CHECK(loaded[i].trajectory.positions[k] == samples[i].trajectory.positions[k]);
      CHECK(loaded[i].ego_poses[k] == samples[i].ego_poses[k]);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("empty dataset round-trips as a header-only file") {
  const std::string path = "test_dataset_empty.bin";
  write_dataset({}, path);
  auto loaded = read_dataset(path);
  CHECK(loaded.empty());
  std::remove(path.c_str());
}

TEST_CASE("corrupted magic raises a format error, not a crash") {
  const std::string path = "test_dataset_bad.bin";
  write_dataset({}, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOPE", 4);
  }
  CHECK_THROWS_AS(read_dataset(path), FormatError);

  // truncation also reports an offset
  RandomStream rng(23);
  GridSpec spec{8, 8, 0.5};
  write_dataset({random_sample(rng, spec, 4)}, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  try {
    read_dataset(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.byte_offset > 0);
  }
  std::remove(path.c_str());
}

TEST_CASE("pgm export writes the exact header and payload size") {
  GridSpec spec{4, 6, 1.0};
  OccupancyGrid g(spec);
  for (size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<double>(i) / 23.0;
  const std::string path = "test_grid.pgm";
  write_pgm(g, path);
  std::ifstream in(path, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), {});
  CHECK(all.rfind("P5\n6 4\n255\n", 0) == 0);
  CHECK(all.size() == std::string("P5\n6 4\n255\n").size() + 24);
  // value = round(p * 255)
  const unsigned char* payload =
      reinterpret_cast<const unsigned char*>(all.data() + std::string("P5\n6 4\n255\n").size());
  for (int i = 0; i < 24; ++i) {
    CHECK(payload[i] == static_cast<unsigned char>(std::lround(g.values[i] * 255.0)));
  }
  std::remove(path.c_str());
}
