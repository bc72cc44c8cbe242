#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rcsm/types.hpp"

namespace rcsm {

enum class InputMode : std::uint8_t { single = 0, dual = 1 };
enum class InputFrame : std::uint8_t { cartesian = 0, polar = 1 };

struct MaskNetConfig {
  int depth{2};          ///< number of 2x2 max-pool levels
  int base_channels{4};  ///< channels at the first level, doubled per level
  InputMode input_mode{InputMode::single};
  InputFrame input_frame{InputFrame::cartesian};
  int kernel_size{3};

  /// Five pooling levels, 8 channels at the input and 256 at the bottleneck.
  static MaskNetConfig full_scale() { return {5, 8, InputMode::single, InputFrame::cartesian, 3}; }

  int io_channels() const { return input_mode == InputMode::dual ? 2 : 1; }
  void validate() const;
  bool operator==(const MaskNetConfig&) const = default;
};

std::string to_string(const MaskNetConfig& cfg);

/// One convolution. Its weight occupies `out * in * k * k` parameters stored
/// row-major over (out, in, k_y, k_x), followed elsewhere by `out` biases.
struct ConvLayer {
  std::string name;
  int in_channels{0};
  int out_channels{0};
  int kernel{0};
  Eigen::Index weight_offset{0};
  Eigen::Index bias_offset{0};
  Eigen::Index weight_size() const { return Eigen::Index(out_channels) * in_channels * kernel * kernel; }
};

struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  Eigen::Index offset{0};
  Eigen::Index size{0};
};

/// U-Net style masking network f_alpha. All parameters live in one flat
/// vector; layers index into it.
class MaskNet {
 public:
  /// Network with every parameter zero (mask == 0.5 everywhere).
  explicit MaskNet(const MaskNetConfig& config);

  /// Fan-in scaled uniform initialisation; the output layer starts near zero
  /// so the initial mask is close to 0.5. Values are float32-representable.
  static MaskNet initialised(const MaskNetConfig& config, std::uint64_t seed);

  const MaskNetConfig& config() const { return config_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::vector<NamedTensor> tensors() const;

  Eigen::VectorXd& parameters() { return parameters_; }
  const Eigen::VectorXd& parameters() const { return parameters_; }
  Eigen::Index parameter_count() const { return parameters_.size(); }

  /// Rounds every parameter to the nearest float32 (the stored precision).
  void quantise_to_float();

 private:
  MaskNetConfig config_;
  std::vector<ConvLayer> layers_;
  Eigen::VectorXd parameters_;
};

/// Saved activations of one forward pass. Consumed by exactly one backward.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;

  bool empty() const;
  bool consumed() const;
  std::size_t size() const;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

/// Masks in (0, 1) for one input (single mode) or two inputs (dual mode).
/// Inputs must share a shape divisible by 2^depth. When `tape` is given every
/// intermediate needed by backward() is recorded into it.
std::vector<Image> forward(const MaskNet& net, std::span<const Image> inputs, Tape* tape = nullptr);

struct MaskNetGradients {
  Eigen::VectorXd parameters;
  std::vector<Image> inputs;
};

/// Reverse-mode pass over a tape produced by forward(). Conventions: ReLU has
/// subgradient 0 at 0; max-pool routes to the first maximal element in
/// (x, y), (x+1, y), (x, y+1), (x+1, y+1) order.
MaskNetGradients backward(const MaskNet& net, Tape& tape, std::span<const Image> grad_masks);

/// S = M (.) Z
Image apply_mask(const Image& mask, const Image& scan);

/// File layout (little endian): "MSKW", u32 version, config (u32 depth,
/// u32 base_channels, u8 input_mode, u8 input_frame, u32 kernel_size),
/// u32 tensor count, then per tensor u32 name length, name bytes, u32 rank,
/// u32 dims[rank], float32 payload.
void save_weights(const MaskNet& net, const std::filesystem::path& path);

/// Throws CorruptFileError, VersionMismatchError, ConfigMismatchError (when
/// `expected` is given and differs) or ShapeError.
MaskNet load_weights(const std::filesystem::path& path, const std::optional<MaskNetConfig>& expected = std::nullopt);

inline constexpr std::uint32_t kWeightsFormatVersion = 1;

}  // namespace rcsm
