#include <gtest/gtest.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <random>

#include "rcsm/errors.hpp"
#include "rcsm/masknet.hpp"
#include "rcsm/pose_estimation.hpp"
#include "test_support.hpp"

namespace rcsm {
namespace {

namespace fs = std::filesystem;

const ConvLayer& layer(const MaskNet& net, const std::string& name) {
  for (const ConvLayer& l : net.layers()) {
    if (l.name == name) return l;
  }
  throw std::runtime_error("no layer " + name);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Image single_mask(const MaskNet& net, const Image& in, Tape* tape = nullptr) {
  return forward(net, std::span<const Image>(&in, 1), tape)[0];
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("rcsm_masknet_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST(MaskNet, ZeroNetworkGivesHalf) {
  const MaskNet net(MaskNetConfig{});
  const Image m = single_mask(net, testing::random_image(16, 16, 1));
  EXPECT_TRUE((m == 0.5).all());
}

TEST(MaskNet, LayerLayout) {
  const MaskNet net(MaskNetConfig{});
  ASSERT_EQ(net.layers().size(), 11u);
  EXPECT_EQ(layer(net, "bottleneck.conv1").out_channels, 16);
  EXPECT_EQ(layer(net, "dec1.conv1").in_channels, 16 + 8);
  EXPECT_EQ(layer(net, "head").kernel, 1);
  const MaskNet full(MaskNetConfig::full_scale());
  EXPECT_EQ(layer(full, "bottleneck.conv2").out_channels, 256);
}

TEST(MaskNet, OutputsStrictlyInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MaskNet net = MaskNet::initialised(MaskNetConfig{}, seed);
    net.parameters() *= 5.0;  // push pre-activations far out
    const Image m = single_mask(net, testing::random_image(16, 16, seed, -50, 50));
    EXPECT_TRUE((m > 0.0).all() && (m < 1.0).all());
  }
}

TEST(MaskNet, ForwardIsDeterministic) {
  const MaskNet net = MaskNet::initialised(MaskNetConfig{}, 3);
  const Image in = testing::random_image(32, 16, 4);
  EXPECT_TRUE((single_mask(net, in) == single_mask(net, in)).all());
  const MaskNet again = MaskNet::initialised(MaskNetConfig{}, 3);
  EXPECT_EQ(net.parameters(), again.parameters());
}

TEST(MaskNet, ShapeAndModeErrors) {
  const MaskNet net(MaskNetConfig{});
  EXPECT_THROW(single_mask(net, Image::Zero(10, 16)), ShapeError);
  const std::array<Image, 2> two = {Image::Zero(8, 8), Image::Zero(8, 8)};
  EXPECT_THROW(forward(net, two), ShapeError);
  EXPECT_THROW(MaskNet(MaskNetConfig{0, 4}), ConfigError);
  EXPECT_THROW(MaskNet(MaskNetConfig{2, 4, InputMode::single, InputFrame::cartesian, 2}), ConfigError);
}

TEST(MaskNet, DualModeSymmetricHeadGivesIdenticalMasks) {
  MaskNetConfig cfg;
  cfg.input_mode = InputMode::dual;
  MaskNet net = MaskNet::initialised(cfg, 8);
  const ConvLayer& head = layer(net, "head");
  auto& p = net.parameters();
  for (int c = 0; c < head.in_channels; ++c) p[head.weight_offset + head.in_channels + c] = p[head.weight_offset + c];
  p[head.bias_offset + 1] = p[head.bias_offset];
  const Image z = testing::random_image(16, 16, 9);
  const std::array<Image, 2> in = {z, z};
  const std::vector<Image> m = forward(net, in);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_TRUE((m[0] == m[1]).all());
}

TEST(MaskNetBackward, ZeroUpstreamGivesZeroGradients) {
  const MaskNet net = MaskNet::initialised(MaskNetConfig{}, 1);
  Tape tape;
  single_mask(net, testing::random_image(16, 16, 2), &tape);
  const Image zero = Image::Zero(16, 16);
  const MaskNetGradients g = backward(net, tape, std::span<const Image>(&zero, 1));
  EXPECT_TRUE((g.parameters.array() == 0.0).all());
  EXPECT_TRUE((g.inputs.at(0) == 0.0).all());
}

TEST(MaskNetBackward, TapeLifecycle) {
  const MaskNet net = MaskNet::initialised(MaskNetConfig{}, 1);
  Tape empty;
  EXPECT_TRUE(empty.empty());
  const Image g = Image::Ones(16, 16);
  EXPECT_TRUE((backward(net, empty, std::span<const Image>(&g, 1)).parameters.array() == 0.0).all());

  Tape tape;
  single_mask(net, testing::random_image(16, 16, 2), &tape);
  EXPECT_FALSE(tape.empty());
  backward(net, tape, std::span<const Image>(&g, 1));
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(backward(net, tape, std::span<const Image>(&g, 1)), DataError);
}

// With 1x1 kernels the network below reduces to mask = sigmoid(w * z + b) for
// non-negative inputs: the encoder passes z through, the bottleneck is zero and
// the decoder keeps only the skip channel.
TEST(MaskNetBackward, ReducedNetworkMatchesClosedForm) {
  MaskNet net(MaskNetConfig{1, 1, InputMode::single, InputFrame::cartesian, 1});
  auto& p = net.parameters();
  p[layer(net, "enc0.conv1").weight_offset] = 1.0;
  p[layer(net, "enc0.conv2").weight_offset] = 1.0;
  p[layer(net, "dec0.conv1").weight_offset + 2] = 1.0;  // channels: 2 upsampled, then the skip
  p[layer(net, "dec0.conv2").weight_offset] = 1.0;
  const double w = 1.7, b = -0.4;
  const ConvLayer& head = layer(net, "head");
  p[head.weight_offset] = w;
  p[head.bias_offset] = b;

  const Image z = testing::random_image(4, 6, 12, 0.05, 1.0);
  const Image up = testing::random_image(4, 6, 13, -1, 1);
  Tape tape;
  const Image m = single_mask(net, z, &tape);
  const Image expected = (w * z + b).unaryExpr([](double v) { return sigmoid(v); });
  EXPECT_LT((m - expected).abs().maxCoeff(), 1e-12);

  const MaskNetGradients g = backward(net, tape, std::span<const Image>(&up, 1));
  const Image dsig = expected * (1.0 - expected);
  EXPECT_NEAR(g.parameters[head.weight_offset], (up * dsig * z).sum(), 1e-10);
  EXPECT_NEAR(g.parameters[head.bias_offset], (up * dsig).sum(), 1e-10);
  EXPECT_LT((g.inputs[0] - up * dsig * w).abs().maxCoeff(), 1e-10);
}

TEST(MaskNetBackward, MatchesFiniteDifferences) {
  const MaskNetConfig cfg{2, 4, InputMode::single, InputFrame::cartesian, 3};
  const MaskNet base = MaskNet::initialised(cfg, 17);
  const Image z = testing::random_image(16, 16, 18);
  const Image r = testing::random_image(16, 16, 19, -1, 1);
  auto loss = [&](const MaskNet& n, const Image& in) { return (single_mask(n, in) * r).sum(); };

  Tape tape;
  single_mask(base, z, &tape);
  const MaskNetGradients g = backward(base, tape, std::span<const Image>(&r, 1));

  std::mt19937_64 rng(20);
  std::uniform_int_distribution<Eigen::Index> pick(0, base.parameter_count() - 1);
  Eigen::ArrayXd fd(25), analytic(25);
  for (int n = 0; n < 25; ++n) {
    const Eigen::Index i = pick(rng);
    MaskNet probe = base;
    const double h = 1e-5;
    probe.parameters()[i] = base.parameters()[i] + h;
    const double up = loss(probe, z);
    probe.parameters()[i] = base.parameters()[i] - h;
    const double down = loss(probe, z);
    fd[n] = (up - down) / (2 * h);
    analytic[n] = g.parameters[i];
  }
  EXPECT_LT(testing::relative_error(fd, analytic), 1e-4);

  const Eigen::ArrayXd fd_in = testing::finite_difference(
      [&](const Eigen::ArrayXd& v) { return loss(base, testing::unflat(v, 16, 16)); }, testing::flat(z), 1e-5);
  EXPECT_LT(testing::relative_error(fd_in, testing::flat(g.inputs[0])), 1e-4);
}

TEST(ApplyMask, Cases) {
  const Image z = testing::random_image(8, 8, 1);
  EXPECT_TRUE((apply_mask(Image::Ones(8, 8), z) == z).all());
  EXPECT_TRUE((apply_mask(Image::Zero(8, 8), z) == 0.0).all());
  EXPECT_TRUE((apply_mask(Image::Constant(8, 8, 0.5), z) == 0.5 * z).all());
  EXPECT_THROW(apply_mask(Image::Ones(8, 4), z), ShapeError);
}

TEST_F(TempDir, SaveLoadRoundTripIsBitExact) {
  const MaskNet net = MaskNet::initialised(MaskNetConfig{}, 5);
  save_weights(net, dir_ / "w.bin");
  const MaskNet loaded = load_weights(dir_ / "w.bin", MaskNetConfig{});
  EXPECT_EQ(loaded.config(), net.config());
  EXPECT_EQ(loaded.parameters(), net.parameters());
  const Image z = testing::random_image(16, 16, 6);
  EXPECT_TRUE((single_mask(net, z) == single_mask(loaded, z)).all());
}

TEST_F(TempDir, LoadRejectsBadFiles) {
  const MaskNet net = MaskNet::initialised(MaskNetConfig{3, 2}, 5);
  const fs::path path = dir_ / "w.bin";
  save_weights(net, path);
  EXPECT_THROW(load_weights(path, MaskNetConfig{2, 2}), ConfigMismatchError);
  EXPECT_NO_THROW(load_weights(path));

  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_weights(path), CorruptFileError);

  std::string bumped = bytes;
  bumped[4] = 2;
  write(bumped);
  EXPECT_THROW(load_weights(path), VersionMismatchError);

  std::string magic = bytes;
  magic[0] = 'X';
  write(magic);
  EXPECT_THROW(load_weights(path), CorruptFileError);

  write(bytes + "x");
  EXPECT_THROW(load_weights(path), CorruptFileError);

  EXPECT_THROW(load_weights(dir_ / "missing.bin"), DataError);
}

// Polar-frame networks mask in polar space before the conversion to
// Cartesian, which is not the same as converting the mask separately.
TEST(PolarMasking, CompositionOrder) {
  MaskNetConfig cfg;
  cfg.input_frame = InputFrame::polar;
  const MaskNet net = MaskNet::initialised(cfg, 30);
  PolarScan a, b;
  a.power = testing::random_image(32, 16, 31);
  b.power = testing::random_image(32, 16, 32);
  a.range_resolution = b.range_resolution = 0.5;
  const CartesianLayout layout{24, 24, 0.5};
  const PoseGrid g = make_pose_grid(SearchRegion::symmetric(2, 2, 0.1), {0.5, 0.5, 0.05});

  const PoseEstimate e = match(a, b, layout, &net, g, 2.0);

  const auto [m1, m2] = compute_masks(net, a.power, b.power);
  PolarScan ma = a, mb = b;
  ma.power = apply_mask(m1, a.power);
  mb.power = apply_mask(m2, b.power);
  const CartesianScan c1 = polar_to_cartesian(ma, 24, 24, 0.5), c2 = polar_to_cartesian(mb, 24, 24, 0.5);
  const PoseEstimate manual = estimate_pose(correlate_fft(g, c1, c2), 2.0);
  EXPECT_EQ(e.mean.vector(), manual.mean.vector());

  PolarScan mask_only = a;
  mask_only.power = m1;
  const Image reversed = polar_to_cartesian(mask_only, 24, 24, 0.5).power * polar_to_cartesian(a, 24, 24, 0.5).power;
  EXPECT_GT((reversed - c1.power).abs().maxCoeff(), 1e-6);
}

}  // namespace
}  // namespace rcsm
