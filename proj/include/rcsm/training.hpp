#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rcsm/dataset.hpp"
#include "rcsm/masknet.hpp"
#include "rcsm/pose_estimation.hpp"

namespace rcsm {

// ---------------------------------------------------------------------------
// Losses

struct LossWeights {
  double x{1.0};
  double y{1.0};
  double theta{1.0};
};

struct PoseLoss {
  double loss{0.0};
  Vector3 gradient{Vector3::Zero()};  ///< dL/d(pred)
};

/// w_x (dx - dx*)^2 + w_y (dy - dy*)^2 + w_t wrap(dtheta - dtheta*)^2
PoseLoss pose_mse_loss(const Pose& pred, const Pose& gt, const LossWeights& w = {});

struct BceLoss {
  double loss{0.0};
  Image gradient;  ///< dL/d(pred)
};

/// Mean per-pixel binary cross entropy. Predictions must lie in (0, 1);
/// labels may be soft.
BceLoss bce_loss(const Image& pred, const Image& label);

// ---------------------------------------------------------------------------
// Optimisers

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind{OptimizerKind::adam};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

struct OptimizerState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step{0};
};

/// One in-place update of `params` along `grad`. The state is sized lazily.
void optimizer_step(const OptimizerConfig& cfg, double learning_rate, Eigen::VectorXd& params,
                    const Eigen::VectorXd& grad, OptimizerState& state);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate{1e-5};
  int batch_size{5};
  double beta{kDefaultBeta};
  LossWeights loss_weights;
  OptimizerConfig optimizer;
  int max_steps{1000};
  int validation_patience{5};    ///< evaluations without improvement before stopping
  int validation_interval{25};   ///< steps between validation evaluations
  double validation_fraction{0.1};
  std::uint64_t seed{0};
  CartesianLayout layout;        ///< raster for polar-frame networks

  void validate() const;
};

struct BatchResult {
  double loss{0.0};
  Eigen::VectorXd gradient;
};

/// Mean pose loss of the batch and its gradient with respect to every network
/// parameter, through mask -> correlate -> soft-argmax -> loss.
BatchResult batch_loss_and_gradient(const MaskNet& net, std::span<const TrainingSample> batch, const PoseGrid& grid,
                                    const TrainConfig& cfg);

/// Mean pose loss without gradients.
double evaluate_pose_loss(const MaskNet& net, std::span<const TrainingSample> samples, const PoseGrid& grid,
                          const TrainConfig& cfg);

/// One optimiser step on the mean batch loss. Returns the pre-step loss.
/// Throws NumericError on a non-finite loss or parameter.
double train_step(MaskNet& net, std::span<const TrainingSample> batch, const PoseGrid& grid, const TrainConfig& cfg,
                  OptimizerState& state);

/// Mask-supervised counterparts: mean BCE between the masks of z1 and z2
/// and their static-structure labels.
BatchResult batch_bce_and_gradient(const MaskNet& net, std::span<const TrainingSample> batch);
double evaluate_bce(const MaskNet& net, std::span<const TrainingSample> samples);

struct LossRecord {
  int step{0};
  double train_loss{0.0};
  std::optional<double> val_loss;
};

struct TrainResult {
  MaskNet net;  ///< best-validation weights (final weights without a validation split)
  std::vector<LossRecord> history;
  std::optional<double> initial_val_loss;
  std::optional<double> best_val_loss;
  int best_step{0};
  int steps_run{0};
  bool early_stopped{false};
};

/// Training and validation indices: a seeded permutation with the last
/// round(fraction * n) entries held out (at least one when n >= 2 and the
/// fraction is positive).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n, double fraction,
                                                                            std::uint64_t seed);

/// Pose-supervised training: seeded mini-batches, validation every
/// `validation_interval` steps, early stopping after `validation_patience`
/// evaluations without improvement.
TrainResult train(const MaskNet& init, const Dataset& data, const PoseGrid& grid, const TrainConfig& cfg);

/// Same loop on the BCE objective; every sample must carry labels and the
/// network must take Cartesian input.
TrainResult train_mask_supervised(const MaskNet& init, const Dataset& data, const TrainConfig& cfg);

/// CSV with header `step,train_loss,val_loss`; val_loss is blank on steps
/// without a validation evaluation.
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

}  // namespace rcsm
