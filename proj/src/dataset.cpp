#include "lopr/dataset.hpp"

#include <cstring>

#include "lopr/binio.hpp"

namespace lopr::ogm {

namespace {

constexpr std::uint32_t kMaxExtent = 1u << 16;

void check_count(std::uint32_t v, std::uint32_t limit, const char* what,
                 std::uint64_t offset) {
  if (v > limit) {
    throw FormatError(std::string("implausible ") + what + " (" + std::to_string(v) + ")",
                      offset);
  }
}

}  // namespace

void write_dataset(const std::vector<SequenceSample>& samples, const std::string& path) {
  GridSpec spec;
  if (!samples.empty()) {
    spec = samples[0].grids.at(0).spec;
    for (const SequenceSample& s : samples) {
      for (const OccupancyGrid& g : s.grids) {
        if (!(g.spec == spec)) {
          throw ContractError("write_dataset requires a consistent GridSpec across samples");
        }
      }
    }
  }
  BinWriter w(path);
  w.bytes(kDatasetMagic, 8);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(spec.h));
  w.u32(static_cast<std::uint32_t>(spec.w));
  w.f64(spec.resolution);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  for (const SequenceSample& s : samples) {
    w.u64(s.sequence_id);
    w.u32(static_cast<std::uint32_t>(s.t_total()));
    w.u32(static_cast<std::uint32_t>(s.t_obs));
    w.u32(static_cast<std::uint32_t>(s.t_fut));
    w.u32(static_cast<std::uint32_t>(s.location_id));
    w.u32(static_cast<std::uint32_t>(s.n_locations));
    w.u32(static_cast<std::uint32_t>(s.aug_id));
    w.u32(static_cast<std::uint32_t>(s.n_augs));
    w.u32(static_cast<std::uint32_t>(s.maps.size()));
    const int mh = s.maps.empty() ? 0 : s.maps[0].h;
    const int mw = s.maps.empty() ? 0 : s.maps[0].w;
    w.u32(static_cast<std::uint32_t>(mh));
    w.u32(static_cast<std::uint32_t>(mw));
    w.u32(static_cast<std::uint32_t>(s.trajectory.positions.size()));
    for (const OccupancyGrid& g : s.grids) {
      for (double v : g.values) w.f32(static_cast<float>(v));
    }
    for (const MapRaster& m : s.maps) w.bytes(m.data.data(), m.data.size());
    for (const auto& p : s.trajectory.positions) {
      w.f64(p[0]);
      w.f64(p[1]);
      w.f64(p[2]);
    }
    for (const auto& p : s.ego_poses) {
      w.f64(p[0]);
      w.f64(p[1]);
      w.f64(p[2]);
    }
  }
  w.close();
}

namespace {

GridSpec read_header(BinReader& r, const std::string& path) {
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kDatasetMagic, 8) != 0) {
    throw FormatError("bad dataset magic in " + path, 0);
  }
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version), 8);
  }
  GridSpec spec;
  const std::uint32_t h = r.u32();
  const std::uint32_t w = r.u32();
  check_count(h, kMaxExtent, "grid height", r.offset() - 8);
  check_count(w, kMaxExtent, "grid width", r.offset() - 4);
  spec.h = static_cast<int>(h);
  spec.w = static_cast<int>(w);
  spec.resolution = r.f64();
  return spec;
}

}  // namespace

GridSpec read_dataset_spec(const std::string& path) {
  BinReader r(path);
  return read_header(r, path);
}

std::vector<SequenceSample> read_dataset(const std::string& path) {
  BinReader r(path);
  const GridSpec spec = read_header(r, path);
  const std::uint32_t n_samples = r.u32();
  check_count(n_samples, 1u << 24, "sample count", r.offset() - 4);
  std::vector<SequenceSample> samples;
  samples.reserve(n_samples);
  for (std::uint32_t si = 0; si < n_samples; ++si) {
    SequenceSample s;
    s.sequence_id = r.u64();
    const std::uint32_t t_total = r.u32();
    check_count(t_total, 1u << 16, "frame count", r.offset() - 4);
    s.t_obs = static_cast<int>(r.u32());
    s.t_fut = static_cast<int>(r.u32());
    s.location_id = static_cast<int>(r.u32());
    s.n_locations = static_cast<int>(r.u32());
    s.aug_id = static_cast<int>(r.u32());
    s.n_augs = static_cast<int>(r.u32());
    const std::uint32_t n_maps = r.u32();
    check_count(n_maps, 1u << 12, "map count", r.offset() - 4);
    const std::uint32_t mh = r.u32();
    const std::uint32_t mw = r.u32();
    check_count(mh, kMaxExtent, "map height", r.offset() - 8);
    check_count(mw, kMaxExtent, "map width", r.offset() - 4);
    const std::uint32_t traj_len = r.u32();
    check_count(traj_len, 1u << 16, "trajectory length", r.offset() - 4);

    s.grids.reserve(t_total);
    for (std::uint32_t t = 0; t < t_total; ++t) {
      OccupancyGrid g(spec);
      for (double& v : g.values) v = static_cast<double>(r.f32());
      s.grids.push_back(std::move(g));
    }
    s.maps.reserve(n_maps);
    for (std::uint32_t t = 0; t < n_maps; ++t) {
      MapRaster m(static_cast<int>(mh), static_cast<int>(mw));
      r.bytes(m.data.data(), m.data.size());
      s.maps.push_back(std::move(m));
    }
    s.trajectory.positions.resize(traj_len);
    for (auto& p : s.trajectory.positions) {
      p[0] = r.f64();
      p[1] = r.f64();
      p[2] = r.f64();
    }
    s.ego_poses.resize(t_total);
    for (auto& p : s.ego_poses) {
      p[0] = r.f64();
      p[1] = r.f64();
      p[2] = r.f64();
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_code_cache(const std::vector<CodeSequence>& sequences, const std::string& path) {
  Shape code_shape;
  if (!sequences.empty() && !sequences[0].codes.empty()) {
    code_shape = sequences[0].codes[0].shape();
  }
  for (const CodeSequence& s : sequences) {
    for (const Tensor& c : s.codes) {
      if (c.shape() != code_shape) {
        throw ContractError("write_code_cache requires one latent shape across sequences");
      }
    }
  }
  BinWriter w(path);
  w.bytes(kCodeCacheMagic, 8);
  w.u32(kCodeCacheVersion);
  w.u32(static_cast<std::uint32_t>(code_shape.size()));
  for (int e : code_shape) w.u32(static_cast<std::uint32_t>(e));
  w.u32(static_cast<std::uint32_t>(sequences.size()));
  for (const CodeSequence& s : sequences) {
    w.u64(s.sequence_id);
    w.u32(static_cast<std::uint32_t>(s.codes.size()));
    w.u32(static_cast<std::uint32_t>(s.t_obs));
    w.u32(static_cast<std::uint32_t>(s.t_fut));
    w.u32(static_cast<std::uint32_t>(s.location_id));
    w.u32(static_cast<std::uint32_t>(s.n_locations));
    w.u32(static_cast<std::uint32_t>(s.aug_id));
    w.u32(static_cast<std::uint32_t>(s.n_augs));
    w.u32(static_cast<std::uint32_t>(s.maps.size()));
    const int mh = s.maps.empty() ? 0 : s.maps[0].h;
    const int mw = s.maps.empty() ? 0 : s.maps[0].w;
    w.u32(static_cast<std::uint32_t>(mh));
    w.u32(static_cast<std::uint32_t>(mw));
    w.u32(static_cast<std::uint32_t>(s.trajectory.positions.size()));
    for (const Tensor& c : s.codes) {
      for (std::int64_t i = 0; i < c.size(); ++i) w.f64(c.data()[i]);
    }
    for (const MapRaster& m : s.maps) w.bytes(m.data.data(), m.data.size());
    for (const auto& p : s.trajectory.positions) {
      w.f64(p[0]);
      w.f64(p[1]);
      w.f64(p[2]);
    }
    for (const auto& p : s.ego_poses) {
      w.f64(p[0]);
      w.f64(p[1]);
      w.f64(p[2]);
    }
  }
  w.close();
}

std::vector<CodeSequence> read_code_cache(const std::string& path) {
  BinReader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCodeCacheMagic, 8) != 0) {
    throw FormatError("bad code cache magic in " + path, 0);
  }
  const std::uint32_t version = r.u32();
  if (version != kCodeCacheVersion) {
    throw FormatError("unsupported code cache version " + std::to_string(version), 8);
  }
  const std::uint32_t rank = r.u32();
  check_count(rank, 8, "latent rank", r.offset() - 4);
  Shape code_shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = r.u32();
    check_count(e, kMaxExtent, "latent extent", r.offset() - 4);
    code_shape[i] = static_cast<int>(e);
  }
  const std::uint32_t n_seq = r.u32();
  check_count(n_seq, 1u << 24, "sequence count", r.offset() - 4);
  std::vector<CodeSequence> sequences;
  sequences.reserve(n_seq);
  for (std::uint32_t si = 0; si < n_seq; ++si) {
    CodeSequence s;
    s.sequence_id = r.u64();
    const std::uint32_t t_total = r.u32();
    check_count(t_total, 1u << 16, "frame count", r.offset() - 4);
    s.t_obs = static_cast<int>(r.u32());
    s.t_fut = static_cast<int>(r.u32());
    s.location_id = static_cast<int>(r.u32());
    s.n_locations = static_cast<int>(r.u32());
    s.aug_id = static_cast<int>(r.u32());
    s.n_augs = static_cast<int>(r.u32());
    const std::uint32_t n_maps = r.u32();
    check_count(n_maps, 1u << 12, "map count", r.offset() - 4);
    const std::uint32_t mh = r.u32();
    const std::uint32_t mw = r.u32();
    const std::uint32_t traj_len = r.u32();
    check_count(traj_len, 1u << 16, "trajectory length", r.offset() - 4);
    s.codes.reserve(t_total);
    for (std::uint32_t t = 0; t < t_total; ++t) {
      std::vector<double> data(static_cast<size_t>(shape_numel(code_shape)));
      for (double& v : data) v = r.f64();
      s.codes.push_back(Tensor::from_data(code_shape, std::move(data)));
    }
    s.maps.reserve(n_maps);
    for (std::uint32_t t = 0; t < n_maps; ++t) {
      MapRaster m(static_cast<int>(mh), static_cast<int>(mw));
      r.bytes(m.data.data(), m.data.size());
      s.maps.push_back(std::move(m));
    }
    s.trajectory.positions.resize(traj_len);
    for (auto& p : s.trajectory.positions) {
      p[0] = r.f64();
      p[1] = r.f64();
      p[2] = r.f64();
    }
    s.ego_poses.resize(t_total);
    for (auto& p : s.ego_poses) {
      p[0] = r.f64();
      p[1] = r.f64();
      p[2] = r.f64();
    }
    sequences.push_back(std::move(s));
  }
  return sequences;
}

}  // namespace lopr::ogm
