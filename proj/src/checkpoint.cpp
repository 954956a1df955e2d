#include "lopr/checkpoint.hpp"

#include <cstring>

#include "lopr/binio.hpp"

namespace lopr {

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
  BinWriter w(path);
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (int e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (std::int64_t i = 0; i < t.size(); ++i) w.f64(t.data()[i]);
  }
  w.close();
}

void save_checkpoint(const std::string& path, const ParamMap& params) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.reserve(params.size());
  for (const Param& p : params) tensors.emplace_back(p.name, p.tensor);
  save_checkpoint(path, tensors);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  BinReader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError("bad checkpoint magic in " + path, 0);
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
  }
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t nlen = r.u16();
    std::string name = r.str(nlen);
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      if (e == 0 || e > (1u << 30)) throw FormatError("implausible extent in " + name, r.offset() - 4);
      shape[d] = static_cast<int>(e);
    }
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    for (double& v : data) v = r.f64();
    tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return tensors;
}

void load_into(const std::string& path, ParamMap& params) {
  auto loaded = load_checkpoint(path);
  for (Param& p : params) {
    bool found = false;
    for (auto& [name, t] : loaded) {
      if (name != p.name) continue;
      if (t.shape() != p.tensor.shape()) {
        throw FormatError("checkpoint tensor " + name + " has shape " +
                              shape_str(t.shape()) + ", expected " +
                              shape_str(p.tensor.shape()),
                          0);
      }
      std::memcpy(p.tensor.data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
      found = true;
      break;
    }
    if (!found) throw FormatError("checkpoint missing parameter " + p.name, 0);
  }
}

}  // namespace lopr
