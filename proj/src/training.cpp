#include "rcsm/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "rcsm/detail/text_io.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/parallel.hpp"
#include "rcsm/seed.hpp"

namespace rcsm {

PoseLoss pose_mse_loss(const Pose& pred, const Pose& gt, const LossWeights& w) {
  const Vector3 r = pose_residual(pred, gt);
  const Vector3 wv(w.x, w.y, w.theta);
  PoseLoss out;
  out.loss = (wv.array() * r.array().square()).sum();
  out.gradient = 2.0 * wv.cwiseProduct(r);
  return out;
}

BceLoss bce_loss(const Image& pred, const Image& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols()) throw ShapeError("bce_loss: shape mismatch");
  if (!((pred > 0.0) && (pred < 1.0)).all()) throw NumericError("bce_loss: predictions must lie in (0, 1)");
  const double n = static_cast<double>(pred.size());
  BceLoss out;
  out.loss = -(label * pred.log() + (1.0 - label) * (1.0 - pred).log()).sum() / n;
  out.gradient = (pred - label) / (pred * (1.0 - pred)) / n;
  return out;
}

void optimizer_step(const OptimizerConfig& cfg, double lr, Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                    OptimizerState& st) {
  if (grad.size() != params.size()) throw ShapeError("optimizer_step: gradient size differs from parameters");
  ++st.step;
  if (cfg.kind == OptimizerKind::sgd) {
    params -= lr * grad;
    return;
  }
  if (st.m.size() != params.size()) {
    st.m = Eigen::VectorXd::Zero(params.size());
    st.v = Eigen::VectorXd::Zero(params.size());
  }
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  params.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + cfg.eps);
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("train: beta must be positive");
  if (!(loss_weights.x > 0.0 && loss_weights.y > 0.0 && loss_weights.theta > 0.0)) {
    throw ConfigError("train: loss weights must be positive");
  }
  if (max_steps < 0) throw ConfigError("train: max_steps must be >= 0");
  if (validation_patience < 1) throw ConfigError("train: validation_patience must be >= 1");
  if (validation_interval < 1) throw ConfigError("train: validation_interval must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("train: validation_fraction must be in [0, 1)");
  }
  if (optimizer.kind == OptimizerKind::adam &&
      !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 &&
        optimizer.eps > 0.0)) {
    throw ConfigError("train: Adam needs beta1, beta2 in [0, 1) and eps > 0");
  }
}

namespace {

struct SampleResult {
  double loss{0.0};
  Eigen::VectorXd gradient;
  double max_abs_score{0.0};
};

/// Forward masks with one tape per network evaluation.
struct MaskPass {
  std::vector<Image> masks;
  std::vector<Tape> tapes;
};

MaskPass run_masks(const MaskNet& net, const Image& a, const Image& b, bool record) {
  MaskPass p;
  if (net.config().input_mode == InputMode::dual) {
    p.tapes.resize(1);
    const std::array<Image, 2> in = {a, b};
    p.masks = forward(net, in, record ? &p.tapes[0] : nullptr);
  } else {
    p.tapes.resize(2);
    p.masks.push_back(forward(net, std::span<const Image>(&a, 1), record ? &p.tapes[0] : nullptr)[0]);
    p.masks.push_back(forward(net, std::span<const Image>(&b, 1), record ? &p.tapes[1] : nullptr)[0]);
  }
  return p;
}

Eigen::VectorXd mask_backward(const MaskNet& net, MaskPass& pass, const Image& g1, const Image& g2) {
  if (net.config().input_mode == InputMode::dual) {
    const std::array<Image, 2> g = {g1, g2};
    return backward(net, pass.tapes[0], g).parameters;
  }
  Eigen::VectorXd total = backward(net, pass.tapes[0], std::span<const Image>(&g1, 1)).parameters;
  total += backward(net, pass.tapes[1], std::span<const Image>(&g2, 1)).parameters;
  return total;
}

SampleResult pose_sample(const MaskNet& net, const TrainingSample& s, const PoseGrid& grid, const TrainConfig& cfg,
                         bool need_gradient) {
  const bool polar = net.config().input_frame == InputFrame::polar;
  if (polar && (!s.p1 || !s.p2)) throw DataError("training: polar-frame network needs polar scans in every sample");
  const Image& in1 = polar ? s.p1->power : s.z1.power;
  const Image& in2 = polar ? s.p2->power : s.z2.power;

  MaskPass pass = run_masks(net, in1, in2, need_gradient);
  const Image s1 = apply_mask(pass.masks[0], in1);
  const Image s2 = apply_mask(pass.masks[1], in2);

  CartesianScan c1, c2;
  PolarScan q1, q2;
  if (polar) {
    q1 = *s.p1;
    q2 = *s.p2;
    q1.power = s1;
    q2.power = s2;
    c1 = polar_to_cartesian(q1, cfg.layout.width, cfg.layout.height, cfg.layout.meters_per_pixel);
    c2 = polar_to_cartesian(q2, cfg.layout.width, cfg.layout.height, cfg.layout.meters_per_pixel);
  } else {
    c1 = s.z1;
    c2 = s.z2;
    c1.power = s1;
    c2.power = s2;
  }

  const CorrelationVolume c = correlate_fft(grid, c1, c2);
  SampleResult out;
  out.max_abs_score = c.scores.values().abs().maxCoeff();
  const SoftArgmax sa = soft_argmax(grid, c, cfg.beta);
  const PoseLoss loss = pose_mse_loss(sa.pose, s.pose_gt, cfg.loss_weights);
  out.loss = loss.loss;
  if (!need_gradient || !std::isfinite(loss.loss)) return out;

  const Volume dc = soft_argmax_backward(grid, sa.weights, cfg.beta, loss.gradient);
  CorrelationGradients g = correlate_backward(grid, c1, c2, dc);
  Image ds1 = polar ? polar_to_cartesian_backward(q1, c1, g.s1) : std::move(g.s1);
  Image ds2 = polar ? polar_to_cartesian_backward(q2, c2, g.s2) : std::move(g.s2);
  out.gradient = mask_backward(net, pass, ds1 * in1, ds2 * in2);
  return out;
}

SampleResult bce_sample(const MaskNet& net, const TrainingSample& s, bool need_gradient) {
  if (net.config().input_frame != InputFrame::cartesian) {
    throw ConfigError("mask supervision requires a Cartesian-frame network");
  }
  if (!s.has_labels()) throw DataError("mask supervision: sample without labels");
  MaskPass pass = run_masks(net, s.z1.power, s.z2.power, need_gradient);
  const BceLoss l1 = bce_loss(pass.masks[0], s.label1);
  const BceLoss l2 = bce_loss(pass.masks[1], s.label2);
  SampleResult out;
  out.loss = 0.5 * (l1.loss + l2.loss);
  if (need_gradient) out.gradient = mask_backward(net, pass, 0.5 * l1.gradient, 0.5 * l2.gradient);
  return out;
}

template <typename PerSample>
BatchResult reduce_batch(const MaskNet& net, std::size_t n, PerSample&& per_sample, bool need_gradient,
                         const char* what) {
  if (n == 0) throw DataError(std::string(what) + ": empty batch");
  std::vector<SampleResult> results(n);
  parallel_for(static_cast<int>(n), [&](int i) { results[static_cast<std::size_t>(i)] = per_sample(i); });
  BatchResult out;
  if (need_gradient) out.gradient = Eigen::VectorXd::Zero(net.parameter_count());
  double max_score = 0.0;
  for (const SampleResult& r : results) {
    out.loss += r.loss;
    if (need_gradient && r.gradient.size() > 0) out.gradient += r.gradient;
    max_score = std::max(max_score, r.max_abs_score);
  }
  out.loss /= static_cast<double>(n);
  if (need_gradient) out.gradient /= static_cast<double>(n);
  if (!std::isfinite(out.loss)) {
    std::ostringstream msg;
    msg << what << ": non-finite loss (max |C| = " << max_score
        << ", max |alpha| = " << net.parameters().cwiseAbs().maxCoeff() << ")";
    throw NumericError(msg.str());
  }
  return out;
}

}  // namespace

BatchResult batch_loss_and_gradient(const MaskNet& net, std::span<const TrainingSample> batch, const PoseGrid& grid,
                                    const TrainConfig& cfg) {
  return reduce_batch(
      net, batch.size(), [&](int i) { return pose_sample(net, batch[static_cast<std::size_t>(i)], grid, cfg, true); },
      true, "train_step");
}

double evaluate_pose_loss(const MaskNet& net, std::span<const TrainingSample> samples, const PoseGrid& grid,
                          const TrainConfig& cfg) {
  return reduce_batch(
             net, samples.size(),
             [&](int i) { return pose_sample(net, samples[static_cast<std::size_t>(i)], grid, cfg, false); }, false,
             "evaluate_pose_loss")
      .loss;
}

BatchResult batch_bce_and_gradient(const MaskNet& net, std::span<const TrainingSample> batch) {
  return reduce_batch(
      net, batch.size(), [&](int i) { return bce_sample(net, batch[static_cast<std::size_t>(i)], true); }, true,
      "mask-supervised step");
}

double evaluate_bce(const MaskNet& net, std::span<const TrainingSample> samples) {
  return reduce_batch(
             net, samples.size(), [&](int i) { return bce_sample(net, samples[static_cast<std::size_t>(i)], false); },
             false, "evaluate_bce")
      .loss;
}

namespace {

void apply_update(MaskNet& net, const BatchResult& b, const TrainConfig& cfg, OptimizerState& state) {
  optimizer_step(cfg.optimizer, cfg.learning_rate, net.parameters(), b.gradient, state);
  net.quantise_to_float();
  if (!net.parameters().allFinite()) {
    throw NumericError("training produced non-finite parameters at step " + std::to_string(state.step));
  }
}

}  // namespace

double train_step(MaskNet& net, std::span<const TrainingSample> batch, const PoseGrid& grid, const TrainConfig& cfg,
                  OptimizerState& state) {
  cfg.validate();
  const BatchResult b = batch_loss_and_gradient(net, batch, grid, cfg);
  apply_update(net, b, cfg, state);
  return b.loss;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(sub_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n >= 2) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, n - std::min<std::size_t>(n, 1));
  std::vector<std::size_t> val(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
  idx.resize(n - n_val);
  std::sort(idx.begin(), idx.end());
  std::sort(val.begin(), val.end());
  return {idx, val};
}

namespace {

Dataset gather(const Dataset& data, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

/// Shared loop: `step_fn(net, batch, state)` performs an update and returns
/// the pre-step loss; `val_fn(net, samples)` scores a held-out set.
template <typename StepFn, typename ValFn>
TrainResult run_training(const MaskNet& init, const Dataset& data, const TrainConfig& cfg, StepFn&& step_fn,
                         ValFn&& val_fn) {
  cfg.validate();
  if (data.empty()) throw DataError("train: dataset is empty");
  TrainResult result{init, {}, std::nullopt, std::nullopt, 0, 0, false};
  if (cfg.max_steps == 0) return result;

  const auto [train_idx, val_idx] = split_dataset(data.size(), cfg.validation_fraction, cfg.seed);
  const Dataset train_set = gather(data, train_idx);
  const Dataset val_set = gather(data, val_idx);

  MaskNet net = init;
  OptimizerState state;
  std::mt19937_64 rng(sub_seed(cfg.seed, "batches"));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  int stale = 0;
  if (!val_set.empty()) {
    result.initial_val_loss = val_fn(net, val_set);
    result.best_val_loss = result.initial_val_loss;
  }

  Dataset batch;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    batch.clear();
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    LossRecord rec{step, step_fn(net, batch, state), std::nullopt};
    result.steps_run = step;

    if (!val_set.empty() && (step % cfg.validation_interval == 0 || step == cfg.max_steps)) {
      const double v = val_fn(net, val_set);
      rec.val_loss = v;
      if (v < *result.best_val_loss) {
        result.best_val_loss = v;
        result.best_step = step;
        result.net = net;
        stale = 0;
      } else if (++stale >= cfg.validation_patience) {
        result.history.push_back(rec);
        result.early_stopped = true;
        break;
      }
    }
    result.history.push_back(rec);
  }
  if (val_set.empty()) {
    result.net = net;
    result.best_step = result.steps_run;
  }
  return result;
}

}  // namespace

TrainResult train(const MaskNet& init, const Dataset& data, const PoseGrid& grid, const TrainConfig& cfg) {
  return run_training(
      init, data, cfg,
      [&](MaskNet& net, const Dataset& batch, OptimizerState& state) {
        return train_step(net, batch, grid, cfg, state);
      },
      [&](const MaskNet& net, const Dataset& val) { return evaluate_pose_loss(net, val, grid, cfg); });
}

TrainResult train_mask_supervised(const MaskNet& init, const Dataset& data, const TrainConfig& cfg) {
  if (init.config().input_frame != InputFrame::cartesian) {
    throw ConfigError("mask supervision requires a Cartesian-frame network");
  }
  for (const TrainingSample& s : data) {
    if (!s.has_labels()) throw DataError("mask supervision: every sample needs labels");
  }
  return run_training(
      init, data, cfg,
      [&](MaskNet& net, const Dataset& batch, OptimizerState& state) {
        const BatchResult b = batch_bce_and_gradient(net, batch);
        apply_update(net, b, cfg, state);
        return b.loss;
      },
      [&](const MaskNet& net, const Dataset& val) { return evaluate_bce(net, val); });
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::string out = "step,train_loss,val_loss\n";
  for (const LossRecord& r : history) {
    out += std::to_string(r.step) + ',' + detail::format_double(r.train_loss) + ',';
    if (r.val_loss) out += detail::format_double(*r.val_loss);
    out += '\n';
  }
  detail::write_text_file(path, out);
}

}  // namespace rcsm
