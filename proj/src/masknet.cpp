#include "rcsm/masknet.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rcsm/detail/bilinear.hpp"
#include "rcsm/errors.hpp"

namespace rcsm {

namespace masknet_detail {

/// Multi-channel activation: one column per channel, pixel p = x + w * y.
struct FeatureMap {
  Eigen::Index w{0};
  Eigen::Index h{0};
  Eigen::MatrixXd data;
  Eigen::Index channels() const { return data.cols(); }
  Eigen::Index pixels() const { return w * h; }
};

enum class OpKind { conv, relu, maxpool, upsample, concat, sigmoid };

struct TapeOp {
  OpKind kind;
  int in0{-1};
  int in1{-1};
  int out{-1};
  int layer{-1};
  std::vector<Eigen::Index> argmax;
};

}  // namespace masknet_detail

using masknet_detail::FeatureMap;
using masknet_detail::OpKind;
using masknet_detail::TapeOp;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tape::Impl {
  std::vector<FeatureMap> values;
  std::vector<TapeOp> ops;
  std::vector<int> inputs;
  int output{-1};
  bool consumed{false};

  int push(FeatureMap v) {
    values.push_back(std::move(v));
    return static_cast<int>(values.size()) - 1;
  }
};

Tape::Tape() : impl_(std::make_unique<Impl>()) {}
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;
bool Tape::empty() const { return impl_->ops.empty(); }
bool Tape::consumed() const { return impl_->consumed; }
std::size_t Tape::size() const { return impl_->ops.size(); }

void MaskNetConfig::validate() const {
  if (depth < 1) throw ConfigError("masknet: depth must be >= 1");
  if (base_channels < 1) throw ConfigError("masknet: base_channels must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("masknet: kernel_size must be odd");
  if (depth > 12 || base_channels > 4096) throw ConfigError("masknet: depth/base_channels out of range");
}

std::string to_string(const MaskNetConfig& cfg) {
  std::ostringstream s;
  s << "depth=" << cfg.depth << " base_channels=" << cfg.base_channels
    << " input_mode=" << (cfg.input_mode == InputMode::dual ? "dual" : "single")
    << " input_frame=" << (cfg.input_frame == InputFrame::polar ? "polar" : "cartesian")
    << " kernel_size=" << cfg.kernel_size;
  return s.str();
}

MaskNet::MaskNet(const MaskNetConfig& config) : config_(config) {
  config_.validate();
  Eigen::Index offset = 0;
  auto add = [&](std::string name, int in, int out, int k) {
    ConvLayer l{std::move(name), in, out, k, offset, 0};
    offset += l.weight_size();
    l.bias_offset = offset;
    offset += out;
    layers_.push_back(std::move(l));
  };
  const int k = config_.kernel_size;
  const int io = config_.io_channels();
  auto channels = [&](int level) { return config_.base_channels << level; };
  int in = io;
  for (int l = 0; l < config_.depth; ++l) {
    add("enc" + std::to_string(l) + ".conv1", in, channels(l), k);
    add("enc" + std::to_string(l) + ".conv2", channels(l), channels(l), k);
    in = channels(l);
  }
  add("bottleneck.conv1", in, channels(config_.depth), k);
  add("bottleneck.conv2", channels(config_.depth), channels(config_.depth), k);
  for (int l = config_.depth - 1; l >= 0; --l) {
    add("dec" + std::to_string(l) + ".conv1", channels(l + 1) + channels(l), channels(l), k);
    add("dec" + std::to_string(l) + ".conv2", channels(l), channels(l), k);
  }
  add("head", channels(0), io, 1);
  parameters_ = Eigen::VectorXd::Zero(offset);
}

MaskNet MaskNet::initialised(const MaskNetConfig& config, std::uint64_t seed) {
  MaskNet net(config);
  std::mt19937_64 rng(seed);
  for (const ConvLayer& l : net.layers_) {
    const bool head = &l == &net.layers_.back();
    const double fan_in = static_cast<double>(l.in_channels) * l.kernel * l.kernel;
    const double bound = head ? 1e-3 : std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < l.weight_size(); ++i) net.parameters_[l.weight_offset + i] = dist(rng);
  }
  net.quantise_to_float();
  return net;
}

std::vector<NamedTensor> MaskNet::tensors() const {
  std::vector<NamedTensor> out;
  for (const ConvLayer& l : layers_) {
    out.push_back({l.name + ".weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}, l.weight_offset,
                   l.weight_size()});
    out.push_back({l.name + ".bias", {l.out_channels}, l.bias_offset, l.out_channels});
  }
  return out;
}

void MaskNet::quantise_to_float() {
  parameters_ = parameters_.cast<float>().cast<double>();
}

namespace {

// Forward primitives ---------------------------------------------------------

Eigen::MatrixXd im2col(const FeatureMap& x, int k) {
  const int pad = k / 2;
  const Eigen::Index w = x.w, h = x.h;
  Eigen::MatrixXd col = Eigen::MatrixXd::Zero(x.pixels(), x.channels() * k * k);
  for (Eigen::Index c = 0; c < x.channels(); ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index r = (c * k + ky) * k + kx;
        const int dy = ky - pad, dx = kx - pad;
        const Eigen::Index x_lo = std::max<Eigen::Index>(0, -dx), x_hi = std::min<Eigen::Index>(w, w - dx);
        if (x_hi <= x_lo) continue;
        for (Eigen::Index y = std::max<Eigen::Index>(0, -dy); y < std::min<Eigen::Index>(h, h - dy); ++y) {
          col.col(r).segment(x_lo + w * y, x_hi - x_lo) = x.data.col(c).segment(x_lo + dx + w * (y + dy), x_hi - x_lo);
        }
      }
    }
  }
  return col;
}

void col2im_add(const Eigen::MatrixXd& col, int k, FeatureMap& grad) {
  const int pad = k / 2;
  const Eigen::Index w = grad.w, h = grad.h;
  for (Eigen::Index c = 0; c < grad.channels(); ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index r = (c * k + ky) * k + kx;
        const int dy = ky - pad, dx = kx - pad;
        const Eigen::Index x_lo = std::max<Eigen::Index>(0, -dx), x_hi = std::min<Eigen::Index>(w, w - dx);
        if (x_hi <= x_lo) continue;
        for (Eigen::Index y = std::max<Eigen::Index>(0, -dy); y < std::min<Eigen::Index>(h, h - dy); ++y) {
          grad.data.col(c).segment(x_lo + dx + w * (y + dy), x_hi - x_lo) += col.col(r).segment(x_lo + w * y, x_hi - x_lo);
        }
      }
    }
  }
}

Eigen::Map<const RowMajorMatrix> weight_matrix(const MaskNet& net, const ConvLayer& l) {
  return {net.parameters().data() + l.weight_offset, l.out_channels, Eigen::Index(l.in_channels) * l.kernel * l.kernel};
}

FeatureMap conv(const MaskNet& net, const ConvLayer& l, const FeatureMap& x) {
  FeatureMap y{x.w, x.h, im2col(x, l.kernel) * weight_matrix(net, l).transpose()};
  const Eigen::Map<const Eigen::VectorXd> bias(net.parameters().data() + l.bias_offset, l.out_channels);
  y.data.rowwise() += bias.transpose();
  return y;
}

std::pair<FeatureMap, std::vector<Eigen::Index>> maxpool(const FeatureMap& x) {
  FeatureMap y{x.w / 2, x.h / 2, Eigen::MatrixXd(x.pixels() / 4, x.channels())};
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(y.data.size()));
  const Eigen::Index P = x.pixels();
  for (Eigen::Index c = 0; c < x.channels(); ++c) {
    for (Eigen::Index oy = 0; oy < y.h; ++oy) {
      for (Eigen::Index ox = 0; ox < y.w; ++ox) {
        const Eigen::Index base = 2 * ox + x.w * 2 * oy;
        const std::array<Eigen::Index, 4> cand = {base, base + 1, base + x.w, base + x.w + 1};
        Eigen::Index best = cand[0];
        for (int q = 1; q < 4; ++q) {
          if (x.data(cand[q], c) > x.data(best, c)) best = cand[q];
        }
        const Eigen::Index o = ox + y.w * oy;
        y.data(o, c) = x.data(best, c);
        argmax[static_cast<std::size_t>(o + y.pixels() * c)] = best + P * c;
      }
    }
  }
  return {std::move(y), std::move(argmax)};
}

std::vector<detail::BilinearTaps> upsample_taps(Eigen::Index w, Eigen::Index h) {
  std::vector<detail::BilinearTaps> taps;
  taps.reserve(static_cast<std::size_t>(4 * w * h));
  for (Eigen::Index oy = 0; oy < 2 * h; ++oy) {
    for (Eigen::Index ox = 0; ox < 2 * w; ++ox) {
      taps.push_back(detail::bilinear_taps((ox + 0.5) * 0.5 - 0.5, (oy + 0.5) * 0.5 - 0.5, w, h,
                                           detail::Boundary::clamp, detail::Boundary::clamp));
    }
  }
  return taps;
}

FeatureMap upsample(const FeatureMap& x) {
  FeatureMap y{2 * x.w, 2 * x.h, Eigen::MatrixXd::Zero(4 * x.pixels(), x.channels())};
  const auto taps = upsample_taps(x.w, x.h);
  for (Eigen::Index o = 0; o < y.pixels(); ++o) {
    const auto& t = taps[static_cast<std::size_t>(o)];
    for (int q = 0; q < 4; ++q) {
      if (t.w[q] != 0.0) y.data.row(o) += t.w[q] * x.data.row(t.ix[q] + x.w * t.iy[q]);
    }
  }
  return y;
}

FeatureMap concat(const FeatureMap& a, const FeatureMap& b) {
  FeatureMap y{a.w, a.h, Eigen::MatrixXd(a.pixels(), a.channels() + b.channels())};
  y.data << a.data, b.data;
  return y;
}

// Forward pass that records into a tape ------------------------------------

class Recorder {
 public:
  Recorder(const MaskNet& net, Tape::Impl& tape) : net_(net), t_(tape) {}

  int input(FeatureMap x) {
    const int id = t_.push(std::move(x));
    t_.inputs.push_back(id);
    return id;
  }
  int conv(int in, int layer) {
    return record(OpKind::conv, in, -1, layer, rcsm::conv(net_, net_.layers()[layer], t_.values[in]));
  }
  int relu(int in) {
    FeatureMap y = t_.values[in];
    y.data = y.data.cwiseMax(0.0);
    return record(OpKind::relu, in, -1, -1, std::move(y));
  }
  int sigmoid(int in) {
    FeatureMap y = t_.values[in];
    // Saturated values are pulled back to the nearest doubles inside (0, 1).
    y.data = (1.0 / (1.0 + (-y.data.array()).exp()))
                 .max(std::numeric_limits<double>::min())
                 .min(std::nextafter(1.0, 0.0))
                 .matrix();
    return record(OpKind::sigmoid, in, -1, -1, std::move(y));
  }
  int maxpool(int in) {
    auto [y, argmax] = rcsm::maxpool(t_.values[in]);
    const int id = record(OpKind::maxpool, in, -1, -1, std::move(y));
    t_.ops.back().argmax = std::move(argmax);
    return id;
  }
  int upsample(int in) { return record(OpKind::upsample, in, -1, -1, rcsm::upsample(t_.values[in])); }
  int concat(int a, int b) { return record(OpKind::concat, a, b, -1, rcsm::concat(t_.values[a], t_.values[b])); }

 private:
  int record(OpKind kind, int in0, int in1, int layer, FeatureMap y) {
    const int out = t_.push(std::move(y));
    t_.ops.push_back({kind, in0, in1, out, layer, {}});
    return out;
  }

  const MaskNet& net_;
  Tape::Impl& t_;
};

}  // namespace

std::vector<Image> forward(const MaskNet& net, std::span<const Image> inputs, Tape* tape) {
  const MaskNetConfig& cfg = net.config();
  if (static_cast<int>(inputs.size()) != cfg.io_channels()) {
    throw ShapeError("masknet forward: expected " + std::to_string(cfg.io_channels()) + " input(s), got " +
                     std::to_string(inputs.size()));
  }
  const Eigen::Index w = inputs[0].rows(), h = inputs[0].cols();
  for (const Image& in : inputs) {
    if (in.rows() != w || in.cols() != h) throw ShapeError("masknet forward: inputs differ in shape");
  }
  const Eigen::Index factor = Eigen::Index(1) << cfg.depth;
  if (w == 0 || h == 0 || w % factor != 0 || h % factor != 0) {
    throw ShapeError("masknet forward: input " + std::to_string(w) + "x" + std::to_string(h) +
                     " is not divisible by 2^depth = " + std::to_string(factor));
  }

  Tape local;
  Tape& t = tape ? *tape : local;
  t = Tape();
  Recorder rec(net, t.impl());

  FeatureMap x{w, h, Eigen::MatrixXd(w * h, cfg.io_channels())};
  for (std::size_t c = 0; c < inputs.size(); ++c) {
    x.data.col(static_cast<Eigen::Index>(c)) = inputs[c].reshaped().matrix();
  }
  int cur = rec.input(std::move(x));
  int layer = 0;
  std::vector<int> skips;
  for (int l = 0; l < cfg.depth; ++l) {
    cur = rec.relu(rec.conv(cur, layer++));
    cur = rec.relu(rec.conv(cur, layer++));
    skips.push_back(cur);
    cur = rec.maxpool(cur);
  }
  cur = rec.relu(rec.conv(cur, layer++));
  cur = rec.relu(rec.conv(cur, layer++));
  for (int l = cfg.depth - 1; l >= 0; --l) {
    cur = rec.concat(rec.upsample(cur), skips[static_cast<std::size_t>(l)]);
    cur = rec.relu(rec.conv(cur, layer++));
    cur = rec.relu(rec.conv(cur, layer++));
  }
  cur = rec.sigmoid(rec.conv(cur, layer++));
  t.impl().output = cur;

  const FeatureMap& y = t.impl().values[static_cast<std::size_t>(cur)];
  std::vector<Image> masks;
  for (Eigen::Index c = 0; c < y.channels(); ++c) {
    masks.push_back(y.data.col(c).array().reshaped(w, h));
  }
  return masks;
}

MaskNetGradients backward(const MaskNet& net, Tape& tape, std::span<const Image> grad_masks) {
  Tape::Impl& t = tape.impl();
  if (t.consumed) throw DataError("masknet backward: tape already consumed");
  t.consumed = true;
  MaskNetGradients g;
  g.parameters = Eigen::VectorXd::Zero(net.parameter_count());
  if (t.ops.empty()) return g;

  const FeatureMap& out = t.values[static_cast<std::size_t>(t.output)];
  if (static_cast<Eigen::Index>(grad_masks.size()) != out.channels()) {
    throw ShapeError("masknet backward: expected " + std::to_string(out.channels()) + " mask gradient(s)");
  }
  std::vector<FeatureMap> grads(t.values.size());
  auto grad_of = [&](int id) -> FeatureMap& {
    FeatureMap& gm = grads[static_cast<std::size_t>(id)];
    if (gm.data.size() == 0) {
      const FeatureMap& v = t.values[static_cast<std::size_t>(id)];
      gm = {v.w, v.h, Eigen::MatrixXd::Zero(v.pixels(), v.channels())};
    }
    return gm;
  };
  FeatureMap& g_out = grad_of(t.output);
  for (std::size_t c = 0; c < grad_masks.size(); ++c) {
    if (grad_masks[c].rows() != out.w || grad_masks[c].cols() != out.h) {
      throw ShapeError("masknet backward: mask gradient shape mismatch");
    }
    g_out.data.col(static_cast<Eigen::Index>(c)) = grad_masks[c].reshaped().matrix();
  }

  for (auto it = t.ops.rbegin(); it != t.ops.rend(); ++it) {
    const TapeOp& op = *it;
    if (grads[static_cast<std::size_t>(op.out)].data.size() == 0) continue;
    const FeatureMap& dy = grads[static_cast<std::size_t>(op.out)];
    const FeatureMap& x = t.values[static_cast<std::size_t>(op.in0)];
    switch (op.kind) {
      case OpKind::conv: {
        const ConvLayer& l = net.layers()[static_cast<std::size_t>(op.layer)];
        const Eigen::MatrixXd col = im2col(x, l.kernel);
        Eigen::Map<RowMajorMatrix> dw(g.parameters.data() + l.weight_offset, l.out_channels,
                                      Eigen::Index(l.in_channels) * l.kernel * l.kernel);
        dw.noalias() += dy.data.transpose() * col;
        g.parameters.segment(l.bias_offset, l.out_channels) += dy.data.colwise().sum().transpose();
        const Eigen::MatrixXd dcol = dy.data * weight_matrix(net, l);
        col2im_add(dcol, l.kernel, grad_of(op.in0));
        break;
      }
      case OpKind::relu:
        grad_of(op.in0).data.array() += dy.data.array() * (x.data.array() > 0.0).cast<double>();
        break;
      case OpKind::sigmoid: {
        const auto& s = t.values[static_cast<std::size_t>(op.out)].data.array();
        grad_of(op.in0).data.array() += dy.data.array() * s * (1.0 - s);
        break;
      }
      case OpKind::maxpool: {
        FeatureMap& dx = grad_of(op.in0);
        for (Eigen::Index i = 0; i < dy.data.size(); ++i) {
          dx.data.data()[op.argmax[static_cast<std::size_t>(i)]] += dy.data.data()[i];
        }
        break;
      }
      case OpKind::upsample: {
        FeatureMap& dx = grad_of(op.in0);
        const auto taps = upsample_taps(x.w, x.h);
        for (Eigen::Index o = 0; o < dy.pixels(); ++o) {
          const auto& tp = taps[static_cast<std::size_t>(o)];
          for (int q = 0; q < 4; ++q) {
            if (tp.w[q] != 0.0) dx.data.row(tp.ix[q] + x.w * tp.iy[q]) += tp.w[q] * dy.data.row(o);
          }
        }
        break;
      }
      case OpKind::concat: {
        const Eigen::Index ca = x.channels();
        const Eigen::Index cb = t.values[static_cast<std::size_t>(op.in1)].channels();
        grad_of(op.in0).data += dy.data.leftCols(ca);
        grad_of(op.in1).data += dy.data.rightCols(cb);
        break;
      }
    }
    grads[static_cast<std::size_t>(op.out)] = FeatureMap{};
  }

  for (int id : t.inputs) {
    const FeatureMap& gi = grad_of(id);
    for (Eigen::Index c = 0; c < gi.channels(); ++c) g.inputs.push_back(gi.data.col(c).array().reshaped(gi.w, gi.h));
  }
  t.values.clear();
  return g;
}

Image apply_mask(const Image& mask, const Image& scan) {
  if (mask.rows() != scan.rows() || mask.cols() != scan.cols()) {
    throw ShapeError("apply_mask: mask and scan differ in shape");
  }
  return mask * scan;
}

}  // namespace rcsm
