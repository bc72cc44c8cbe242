#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rcsm/detail/binary_io.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/masknet.hpp"

namespace rcsm {

namespace {
constexpr char kMagic[4] = {'M', 'S', 'K', 'W'};
}

void save_weights(const MaskNet& net, const std::filesystem::path& path) {
  detail::BinaryWriter out;
  out.bytes(kMagic, 4);
  out.u32(kWeightsFormatVersion);
  const MaskNetConfig& cfg = net.config();
  out.u32(static_cast<std::uint32_t>(cfg.depth));
  out.u32(static_cast<std::uint32_t>(cfg.base_channels));
  out.u8(static_cast<std::uint8_t>(cfg.input_mode));
  out.u8(static_cast<std::uint8_t>(cfg.input_frame));
  out.u32(static_cast<std::uint32_t>(cfg.kernel_size));
  const std::vector<NamedTensor> tensors = net.tensors();
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    out.u32(static_cast<std::uint32_t>(t.name.size()));
    out.bytes(t.name.data(), t.name.size());
    out.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (int d : t.dims) out.u32(static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < t.size; ++i) out.f32(static_cast<float>(net.parameters()[t.offset + i]));
  }
  out.write_file(path);
}

MaskNet load_weights(const std::filesystem::path& path, const std::optional<MaskNetConfig>& expected) {
  detail::BinaryReader in = detail::BinaryReader::from_file(path);
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptFileError("weights file: bad magic in " + path.string());
  const std::uint32_t version = in.u32();
  if (version != kWeightsFormatVersion) {
    throw VersionMismatchError("weights file: unsupported version " + std::to_string(version));
  }
  MaskNetConfig cfg;
  cfg.depth = static_cast<int>(in.u32());
  cfg.base_channels = static_cast<int>(in.u32());
  const std::uint8_t mode = in.u8();
  const std::uint8_t frame = in.u8();
  if (mode > 1 || frame > 1) throw CorruptFileError("weights file: invalid input mode/frame");
  cfg.input_mode = static_cast<InputMode>(mode);
  cfg.input_frame = static_cast<InputFrame>(frame);
  cfg.kernel_size = static_cast<int>(in.u32());
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("weights file: invalid config: ") + e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw ConfigMismatchError("weights file config (" + to_string(cfg) + ") does not match requested (" +
                              to_string(*expected) + ")");
  }

  MaskNet net(cfg);
  const std::vector<NamedTensor> tensors = net.tensors();
  const std::uint32_t count = in.u32();
  if (count != tensors.size()) throw ShapeError("weights file: tensor count does not match config");
  for (const NamedTensor& t : tensors) {
    const std::uint32_t name_len = in.u32();
    if (name_len > 4096) throw CorruptFileError("weights file: implausible tensor name length");
    std::string name(name_len, '\0');
    in.bytes(name.data(), name_len);
    if (name != t.name) throw ShapeError("weights file: expected tensor '" + t.name + "', found '" + name + "'");
    const std::uint32_t rank = in.u32();
    if (rank != t.dims.size()) throw ShapeError("weights file: rank mismatch for " + t.name);
    for (int d : t.dims) {
      if (in.u32() != static_cast<std::uint32_t>(d)) throw ShapeError("weights file: dims mismatch for " + t.name);
    }
    for (Eigen::Index i = 0; i < t.size; ++i) {
      const float v = in.f32();
      if (!std::isfinite(v)) throw CorruptFileError("weights file: non-finite value in " + t.name);
      net.parameters()[t.offset + i] = v;
    }
  }
  if (!in.at_end()) throw CorruptFileError("weights file: trailing bytes");
  return net;
}

}  // namespace rcsm
