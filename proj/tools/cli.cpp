#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "rcsm/detail/text_io.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/evaluation.hpp"
#include "rcsm/masknet.hpp"
#include "rcsm/parallel.hpp"
#include "rcsm/seed.hpp"
#include "rcsm/simworld.hpp"
#include "rcsm/training.hpp"
#include "rcsm/uncertainty.hpp"

namespace rcsm::cli {
namespace {

namespace fs = std::filesystem;

// Raw 0.5 m rasters give correlation scores in the tens; beta = 1 would make
// the softmax nearly uniform there.
constexpr double kDeskBeta = 30.0;

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::vector<double> parse_list(const std::string& flag, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cell.size() || !std::isfinite(v)) {
      throw ConfigError(flag + ": '" + cell + "' is not a number");
    }
    out.push_back(v);
  }
  return out;
}

void check_output(const std::string& flag, const fs::path& p) {
  const fs::path parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw ConfigError(flag + ": directory '" + parent.string() + "' does not exist");
}

/// Outputs are written next to their final names and renamed into place only
/// once the whole command has succeeded.
class StagedOutputs {
 public:
  StagedOutputs() = default;
  StagedOutputs(const StagedOutputs&) = delete;
  StagedOutputs& operator=(const StagedOutputs&) = delete;
  ~StagedOutputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& [staged, final] : entries_) fs::remove_all(staged, ec);
  }

  fs::path add(const fs::path& final) {
    fs::path staged = final;
    staged += ".partial";
    fs::remove_all(staged);
    entries_.emplace_back(staged, final);
    return staged;
  }

  void commit() {
    for (const auto& [staged, final] : entries_) fs::rename(staged, final);
    committed_ = true;
  }

 private:
  std::vector<std::pair<fs::path, fs::path>> entries_;
  bool committed_{false};
};

class ThreadCap {
 public:
  explicit ThreadCap(int n) : previous_(max_threads()) { set_max_threads(n); }
  ~ThreadCap() { set_max_threads(previous_); }
  ThreadCap(const ThreadCap&) = delete;
  ThreadCap& operator=(const ThreadCap&) = delete;

 private:
  int previous_;
};

// ---------------------------------------------------------------------------
// Option groups

struct Common {
  std::string config;
  std::uint64_t seed{0};
  int threads{1};
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "File of key=value lines giving defaults for this command's flags");
  app->add_option("--seed", c.seed, "Run seed; each component draws from its own named sub-stream")
      ->capture_default_str();
  app->add_option("--threads", c.threads, "Upper bound on worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

struct SearchOpts {
  double x{3.0};
  double y{3.0};
  double theta{0.15};
  SearchRegion region() const { return SearchRegion::symmetric(x, y, theta); }
};

void add_search(CLI::App* app, SearchOpts& s) {
  app->add_option("--search-x", s.x, "Half-width of the x search window (m)")->capture_default_str();
  app->add_option("--search-y", s.y, "Half-width of the y search window (m)")->capture_default_str();
  app->add_option("--search-theta", s.theta, "Half-width of the heading search window (rad)")->capture_default_str();
}

struct GridOpts {
  SearchOpts search;
  double res_xy{0.5};
  double res_theta{0.05};
  PoseGrid make() const { return make_pose_grid(search.region(), {res_xy, res_xy, res_theta}); }
};

void add_grid(CLI::App* app, GridOpts& g) {
  add_search(app, g.search);
  app->add_option("--res-xy", g.res_xy, "Translational grid resolution (m)")->capture_default_str();
  app->add_option("--res-theta", g.res_theta, "Rotational grid resolution (rad)")->capture_default_str();
}

struct DatasetOpts {
  std::string dir;
  int sequence{-1};
};

void add_dataset(CLI::App* app, DatasetOpts& d, const char* sequence_help) {
  app->add_option("--dataset", d.dir, "Dataset directory written by 'simulate'")
      ->required()
      ->check(CLI::ExistingDirectory);
  app->add_option("--sequence", d.sequence, sequence_help)->capture_default_str();
}

struct LoadedData {
  DatasetManifest manifest;
  Dataset pairs;
};

LoadedData load(const DatasetOpts& d) {
  LoadedData out;
  out.manifest = read_manifest(fs::path(d.dir) / "manifest.json");
  if (d.sequence >= 0) {
    if (d.sequence >= static_cast<int>(out.manifest.sequences.size())) {
      throw ConfigError("--sequence: dataset has " + std::to_string(out.manifest.sequences.size()) + " sequence(s)");
    }
    out.manifest.sequences = {out.manifest.sequences[static_cast<std::size_t>(d.sequence)]};
  }
  out.pairs = load_dataset(d.dir, out.manifest);
  if (out.pairs.empty()) throw DataError("dataset: no consecutive scan pairs in " + d.dir);
  return out;
}

std::optional<MaskNet> load_net(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_weights(path);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  Common common;
  std::string out;
  int sequences{1};
  int frames{200};
  double frame_period{0.25};
  double speed{6.0};
  double speed_jitter{0.3};
  double yaw_jitter{0.05};
  double yaw_rate_max{0.2};
  int distractors{6};
  double speckle{0.2};
  double ghost_probability{0.02};
  double saturation{1.0};
  double noise_floor{0.01};
  int azimuths{128};
  int range_bins{128};
  double range_resolution{0.25};
  int raster{64};
  double raster_mpp{0.5};
  SearchOpts search;
  bool no_labels{false};
  double label_radius{20.0};
  double label_threshold{0.02};
  int label_min_count{9};
};

CLI::App* setup_simulate(CLI::App& app, SimulateOpts& o) {
  CLI::App* c = app.add_subcommand("simulate", "Render a synthetic radar dataset with ground truth and static labels");
  add_common(c, o.common);
  c->add_option("--out", o.out, "Output dataset directory (must not exist)")->required();
  c->add_option("--sequences", o.sequences, "Number of sequences")->capture_default_str();
  c->add_option("--frames", o.frames, "Frames per sequence")->capture_default_str();
  c->add_option("--frame-period", o.frame_period, "Seconds between frames")->capture_default_str();
  c->add_option("--speed", o.speed, "Sensor speed (m/s)")->capture_default_str();
  c->add_option("--speed-jitter", o.speed_jitter, "Per-frame speed noise std (m/s)")->capture_default_str();
  c->add_option("--yaw-jitter", o.yaw_jitter, "Per-frame yaw-rate noise std (rad/s)")->capture_default_str();
  c->add_option("--yaw-rate-max", o.yaw_rate_max, "Largest per-sequence yaw rate (rad/s)")->capture_default_str();
  c->add_option("--distractors", o.distractors, "Moving distractor objects per sequence")->capture_default_str();
  c->add_option("--speckle", o.speckle, "Multiplicative speckle std")->capture_default_str();
  c->add_option("--ghost-probability", o.ghost_probability, "Per-azimuth ghost streak probability")
      ->capture_default_str();
  c->add_option("--saturation", o.saturation, "Power clipping level")->capture_default_str();
  c->add_option("--noise-floor", o.noise_floor, "Mean receiver noise floor")->capture_default_str();
  c->add_option("--azimuths", o.azimuths, "Azimuths per scan")->capture_default_str();
  c->add_option("--range-bins", o.range_bins, "Range bins per azimuth")->capture_default_str();
  c->add_option("--range-resolution", o.range_resolution, "Metres per range bin")->capture_default_str();
  c->add_option("--raster", o.raster, "Side of the Cartesian raster (pixels)")->capture_default_str();
  c->add_option("--raster-mpp", o.raster_mpp, "Cartesian raster resolution (m/pixel)")->capture_default_str();
  add_search(c, o.search);
  c->add_flag("--no-labels", o.no_labels, "Skip static-structure labels");
  c->add_option("--label-radius", o.label_radius, "Frames within this distance vote on labels (m)")
      ->capture_default_str();
  c->add_option("--label-threshold", o.label_threshold, "Power above which a cell counts as observed")
      ->capture_default_str();
  c->add_option("--label-min-count", o.label_min_count, "A cell is static when observed more often than this")
      ->capture_default_str();
  return c;
}

std::string frame_name(const char* stem, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d.rscn", stem, i);
  return buf;
}

void cmd_simulate(const SimulateOpts& o, std::ostream& out) {
  if (o.frames < 1) throw ConfigError("--frames: need at least one frame");
  if (o.sequences < 1) throw ConfigError("--sequences: need at least one sequence");
  if (o.distractors < 0) throw ConfigError("--distractors: must be non-negative");
  const fs::path dir(o.out);
  check_output("--out", dir);
  if (fs::exists(dir)) throw ConfigError("--out: '" + o.out + "' already exists");

  SensorConfig sensor;
  sensor.n_azimuths = o.azimuths;
  sensor.n_range_bins = o.range_bins;
  sensor.range_resolution = o.range_resolution;
  sensor.validate();
  NoiseConfig noise;
  noise.speckle_std = o.speckle;
  noise.ghost_probability = o.ghost_probability;
  noise.saturation_level = o.saturation;
  noise.receiver_noise_floor = o.noise_floor;
  noise.validate();
  const SearchRegion region = o.search.region();
  region.validate();
  const CartesianLayout layout{o.raster, o.raster, o.raster_mpp};
  if (o.raster < 2 || !(o.raster_mpp > 0.0)) throw ConfigError("--raster: need at least 2 pixels of positive size");

  // The scenario defaults place structure for about 40 frames of travel.
  ScenarioSpec spec;
  const double scale = std::max(1.0, o.frames / 40.0);
  spec.n_segments = static_cast<int>(std::lround(spec.n_segments * scale));
  spec.n_points = static_cast<int>(std::lround(spec.n_points * scale));
  spec.n_distractors = o.distractors;
  spec.yaw_rate_max = o.yaw_rate_max;
  spec.trajectory.n_frames = o.frames;
  spec.trajectory.frame_period = o.frame_period;
  spec.trajectory.speed = o.speed;
  spec.trajectory.speed_jitter = o.speed_jitter;
  spec.trajectory.yaw_jitter = o.yaw_jitter;

  StagedOutputs staged;
  const fs::path stage = staged.add(dir);
  fs::create_directories(stage);

  DatasetManifest manifest;
  manifest.sensor = sensor;
  manifest.layout = layout;
  const std::uint64_t stream = sub_seed(o.common.seed, "simulate");
  double fraction_sum = 0.0;
  for (int s = 0; s < o.sequences; ++s) {
    const std::uint64_t seq_seed = indexed_seed(stream, static_cast<std::uint64_t>(s));
    const Scenario sc = make_scenario(spec, sub_seed(seq_seed, "world"));
    const SimulatedSequence seq =
        generate_sequence(sc.world, sc.trajectory, sensor, noise, region, sub_seed(seq_seed, "render"));

    char name[16];
    std::snprintf(name, sizeof name, "seq%02d", s);
    fs::create_directories(stage / name);
    ManifestSequence ms;
    ms.name = name;
    for (double f : seq.dynamic_fraction) ms.dynamic_fraction += f;
    ms.dynamic_fraction /= static_cast<double>(seq.dynamic_fraction.size());
    fraction_sum += ms.dynamic_fraction;

    std::vector<Image> labels;
    if (!o.no_labels) {
      std::vector<CartesianScan> cart;
      for (const PolarScan& p : seq.scans) cart.push_back(polar_to_cartesian(p, layout.width, layout.height, layout.meters_per_pixel));
      labels = sequence_static_labels(cart, seq.poses, o.label_radius, o.label_threshold, o.label_min_count);
    }
    for (std::size_t f = 0; f < seq.scans.size(); ++f) {
      ManifestFrame mf;
      mf.time = seq.times[f];
      mf.pose = seq.poses[f];
      mf.scan = std::string(name) + "/" + frame_name("scan", static_cast<int>(f));
      write_scan(stage / mf.scan, seq.scans[f]);
      if (!labels.empty()) {
        mf.label = std::string(name) + "/" + frame_name("label", static_cast<int>(f));
        write_scan(stage / mf.label, CartesianScan::centered(labels[f], layout.meters_per_pixel));
      }
      ms.frames.push_back(std::move(mf));
    }
    manifest.sequences.push_back(std::move(ms));
  }
  write_manifest(stage / "manifest.json", manifest);
  staged.commit();

  out << "sequences " << o.sequences << ", frames " << o.frames << " per sequence, distractors " << o.distractors
      << " per sequence, mean dynamic fraction " << fmt(fraction_sum / o.sequences) << "\n";
}

// ---------------------------------------------------------------------------
// train

struct NetOpts {
  int depth{2};
  int channels{4};
  int kernel{3};
  std::string input_mode{"single"};
  std::string input_frame{"cartesian"};

  MaskNetConfig config() const {
    MaskNetConfig c;
    c.depth = depth;
    c.base_channels = channels;
    c.kernel_size = kernel;
    c.input_mode = input_mode == "dual" ? InputMode::dual : InputMode::single;
    c.input_frame = input_frame == "polar" ? InputFrame::polar : InputFrame::cartesian;
    c.validate();
    return c;
  }
};

struct TrainOpts {
  Common common;
  DatasetOpts data;
  GridOpts grid;
  NetOpts net;
  std::string out_weights;
  std::string loss_csv;
  std::string init_weights;
  std::string supervision{"pose"};
  std::string optimizer{"adam"};
  double lr{1e-3};
  int batch{5};
  double beta{kDeskBeta};
  int max_steps{200};
  int patience{5};
  int val_interval{25};
  double val_fraction{0.1};
  double w_x{1.0};
  double w_y{1.0};
  double w_theta{1.0};
};

CLI::App* setup_train(CLI::App& app, TrainOpts& o) {
  CLI::App* c = app.add_subcommand("train", "Train the masking network by pose or mask supervision");
  add_common(c, o.common);
  add_dataset(c, o.data, "Train on this sequence only (-1: all)");
  add_grid(c, o.grid);
  c->add_option("--out-weights", o.out_weights, "Weights file to write")->required();
  c->add_option("--loss-csv", o.loss_csv, "Loss history CSV to write");
  c->add_option("--init-weights", o.init_weights, "Start from these weights (their network shape wins)")
      ->check(CLI::ExistingFile);
  c->add_option("--supervision", o.supervision, "Training signal")
      ->capture_default_str()
      ->check(CLI::IsMember({"pose", "mask"}));
  c->add_option("--depth", o.net.depth, "Pooling levels of the network")->capture_default_str();
  c->add_option("--channels", o.net.channels, "Channels at the first level")->capture_default_str();
  c->add_option("--kernel", o.net.kernel, "Convolution kernel size")->capture_default_str();
  c->add_option("--input-mode", o.net.input_mode, "One scan per forward or both stacked")
      ->capture_default_str()
      ->check(CLI::IsMember({"single", "dual"}));
  c->add_option("--input-frame", o.net.input_frame, "Mask in Cartesian or polar space")
      ->capture_default_str()
      ->check(CLI::IsMember({"cartesian", "polar"}));
  c->add_option("--optimizer", o.optimizer, "Optimiser")->capture_default_str()->check(CLI::IsMember({"adam", "sgd"}));
  c->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  c->add_option("--batch", o.batch, "Batch size")->capture_default_str();
  c->add_option("--beta", o.beta, "Softmax temperature")->capture_default_str();
  c->add_option("--max-steps", o.max_steps, "Optimiser steps")->capture_default_str();
  c->add_option("--patience", o.patience, "Validation evaluations without improvement before stopping")
      ->capture_default_str();
  c->add_option("--val-interval", o.val_interval, "Steps between validation evaluations")->capture_default_str();
  c->add_option("--val-fraction", o.val_fraction, "Fraction of pairs held out for validation")->capture_default_str();
  c->add_option("--w-x", o.w_x, "Loss weight on x")->capture_default_str();
  c->add_option("--w-y", o.w_y, "Loss weight on y")->capture_default_str();
  c->add_option("--w-theta", o.w_theta, "Loss weight on heading")->capture_default_str();
  return c;
}

void cmd_train(const TrainOpts& o, std::ostream& out) {
  check_output("--out-weights", o.out_weights);
  if (!o.loss_csv.empty()) check_output("--loss-csv", o.loss_csv);
  TrainConfig cfg;
  cfg.learning_rate = o.lr;
  cfg.batch_size = o.batch;
  cfg.beta = o.beta;
  cfg.loss_weights = {o.w_x, o.w_y, o.w_theta};
  cfg.optimizer.kind = o.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  cfg.max_steps = o.max_steps;
  cfg.validation_patience = o.patience;
  cfg.validation_interval = o.val_interval;
  cfg.validation_fraction = o.val_fraction;
  cfg.seed = sub_seed(o.common.seed, "train");
  cfg.validate();
  const PoseGrid grid = o.grid.make();
  const MaskNet init = o.init_weights.empty() ? MaskNet::initialised(o.net.config(), sub_seed(o.common.seed, "init"))
                                              : load_weights(o.init_weights);
  const LoadedData data = load(o.data);
  cfg.layout = data.manifest.layout;

  const TrainResult r = o.supervision == "mask" ? train_mask_supervised(init, data.pairs, cfg)
                                                : train(init, data.pairs, grid, cfg);
  StagedOutputs staged;
  save_weights(r.net, staged.add(o.out_weights));
  if (!o.loss_csv.empty()) write_loss_csv(staged.add(o.loss_csv), r.history);
  staged.commit();

  out << "supervision " << o.supervision << ", steps " << r.steps_run;
  if (r.best_val_loss) out << ", best validation loss " << fmt(*r.best_val_loss, 6) << " at step " << r.best_step;
  if (r.early_stopped) out << ", stopped early";
  out << "\n";
}

// ---------------------------------------------------------------------------
// odometry

struct OdometryOpts {
  Common common;
  DatasetOpts data{{}, 0};
  GridOpts grid;
  std::string weights;
  bool no_weights{false};
  double beta{kDeskBeta};
  std::string out;
  std::string gt_out;
};

CLI::App* setup_odometry(CLI::App& app, OdometryOpts& o) {
  CLI::App* c = app.add_subcommand("odometry", "Match consecutive scans of a sequence and write the trajectory");
  add_common(c, o.common);
  add_dataset(c, o.data, "Sequence index");
  add_grid(c, o.grid);
  CLI::Option* w = c->add_option("--weights", o.weights, "Mask network weights")->check(CLI::ExistingFile);
  c->add_flag("--no-weights", o.no_weights, "Match raw scans without a mask")->excludes(w);
  c->add_option("--beta", o.beta, "Softmax temperature")->capture_default_str();
  c->add_option("--out", o.out, "Trajectory CSV to write")->required();
  c->add_option("--gt-out", o.gt_out, "Also write the ground-truth trajectory CSV here");
  return c;
}

void cmd_odometry(const OdometryOpts& o, std::ostream& out) {
  if (o.data.sequence < 0) throw ConfigError("--sequence: odometry needs a single sequence index");
  if (!(o.beta > 0.0)) throw ConfigError("--beta: must be positive");
  check_output("--out", o.out);
  if (!o.gt_out.empty()) check_output("--gt-out", o.gt_out);
  const PoseGrid grid = o.grid.make();
  const std::optional<MaskNet> net = load_net(o.weights);
  const LoadedData data = load(o.data);
  const ManifestSequence& seq = data.manifest.sequences.front();

  Trajectory est, gt;
  est.rel.resize(data.pairs.size());
  est.covariances.resize(data.pairs.size());
  parallel_for(static_cast<int>(data.pairs.size()), [&](int i) {
    const PoseEstimate e =
        estimate_pose(masked_correlation(data.pairs[static_cast<std::size_t>(i)], net ? &*net : nullptr, grid,
                                         data.manifest.layout),
                      o.beta);
    est.rel[static_cast<std::size_t>(i)] = e.mean;
    est.covariances[static_cast<std::size_t>(i)] = e.covariance;
  });
  for (std::size_t i = 0; i < data.pairs.size(); ++i) {
    est.times.push_back(seq.frames[i + 1].time);
    gt.times.push_back(seq.frames[i + 1].time);
    gt.rel.push_back(data.pairs[i].pose_gt);
  }
  StagedOutputs staged;
  write_trajectory_csv(staged.add(o.out), est);
  if (!o.gt_out.empty()) write_trajectory_csv(staged.add(o.gt_out), gt);
  staged.commit();
  out << "sequence " << seq.name << ", " << est.size() << " relative poses, " << (net ? "masked" : "raw")
      << " scans\n";
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOpts {
  Common common;
  DatasetOpts data;
  GridOpts grid;
  std::string weights;
  double beta0{kDeskBeta};
  double beta_min{0.1};
  double beta_max{1000.0};
  int grid_points{31};
  int refine{20};
  double confidence{0.95};
  std::string out;
  std::string sweep_csv;
};

CLI::App* setup_calibrate(CLI::App& app, CalibrateOpts& o) {
  CLI::App* c = app.add_subcommand("calibrate", "Tune the covariance temperature so mean Mahalanobis d^2 is 3");
  add_common(c, o.common);
  add_dataset(c, o.data, "Calibrate on this sequence only (-1: all)");
  add_grid(c, o.grid);
  c->add_option("--weights", o.weights, "Mask network weights (raw scans when absent)")->check(CLI::ExistingFile);
  c->add_option("--beta0", o.beta0, "Temperature used for the pose means")->capture_default_str();
  c->add_option("--beta-min", o.beta_min, "Lower end of the log-spaced sweep")->capture_default_str();
  c->add_option("--beta-max", o.beta_max, "Upper end of the log-spaced sweep")->capture_default_str();
  c->add_option("--grid-points", o.grid_points, "Sweep points")->capture_default_str();
  c->add_option("--refine", o.refine, "Bisection steps around the crossing of 3")->capture_default_str();
  c->add_option("--confidence", o.confidence, "Two-sided level for the coverage report")->capture_default_str();
  c->add_option("--out", o.out, "Calibration JSON to write")->required();
  c->add_option("--sweep-csv", o.sweep_csv, "Also write the (beta, mean d^2) sweep here");
  return c;
}

void cmd_calibrate(const CalibrateOpts& o, std::ostream& out) {
  check_output("--out", o.out);
  if (!o.sweep_csv.empty()) check_output("--sweep-csv", o.sweep_csv);
  CalibrationConfig cc;
  cc.beta_min = o.beta_min;
  cc.beta_max = o.beta_max;
  cc.grid_points = o.grid_points;
  cc.refine_iterations = o.refine;
  cc.validate();
  if (!(o.confidence > 0.0 && o.confidence < 1.0)) throw ConfigError("--confidence: must be in (0, 1)");
  const PoseGrid grid = o.grid.make();
  const std::optional<MaskNet> net = load_net(o.weights);
  const LoadedData data = load(o.data);
  const CalibrationSet set = collect_calibration_set(data.pairs, net ? &*net : nullptr, grid, data.manifest.layout,
                                                     o.beta0);
  const CalibrationResult r = calibrate_beta(set, cc);
  const CoverageReport cov = coverage_report(set, r.beta_star, o.confidence);
  StagedOutputs staged;
  write_calibration_json(staged.add(o.out), r);
  if (!o.sweep_csv.empty()) write_calibration_csv(staged.add(o.sweep_csv), r);
  staged.commit();
  out << "beta_star " << fmt(r.beta_star, 6) << ", mean d^2 " << fmt(r.mean_mahalanobis) << " over " << r.n_samples
      << " pairs, coverage x " << fmt(cov.fraction[0], 3) << " y " << fmt(cov.fraction[1], 3) << " theta "
      << fmt(cov.fraction[2], 3) << "\n";
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  Common common;
  std::string est;
  std::string gt;
  std::string segments;
  int stride{1};
  bool weight_by_count{false};
  std::string out;
};

CLI::App* setup_evaluate(CLI::App& app, EvaluateOpts& o) {
  CLI::App* c = app.add_subcommand("evaluate", "Segment-based translational and rotational drift of a trajectory");
  add_common(c, o.common);
  c->add_option("--est", o.est, "Estimated trajectory CSV")->required()->check(CLI::ExistingFile);
  c->add_option("--gt", o.gt, "Ground-truth trajectory CSV")->required()->check(CLI::ExistingFile);
  c->add_option("--segments", o.segments, "Comma-separated segment lengths in m (default: tenths of the path)");
  c->add_option("--stride", o.stride, "Frames between segment starts")->capture_default_str();
  c->add_flag("--weight-by-count", o.weight_by_count, "Weight lengths by their segment counts");
  c->add_option("--out", o.out, "Report JSON to write");
  return c;
}

void cmd_evaluate(const EvaluateOpts& o, std::ostream& out) {
  if (!o.out.empty()) check_output("--out", o.out);
  KittiConfig cfg;
  if (!o.segments.empty()) cfg.segment_lengths = parse_list("--segments", o.segments);
  cfg.start_stride = o.stride;
  cfg.weight_by_count = o.weight_by_count;
  cfg.validate();
  const OdometryReport r = kitti_errors(read_trajectory_csv(o.est), read_trajectory_csv(o.gt), cfg);
  if (!o.out.empty()) {
    StagedOutputs staged;
    write_report_json(staged.add(o.out), r);
    staged.commit();
  }
  if (r.empty) {
    out << "no segment fits inside the trajectory\n";
    return;
  }
  out << "translation " << fmt(r.trans_pct_mean) << " % (IQR " << fmt(r.trans_pct_iqr) << "), rotation "
      << fmt(r.rot_deg_per_m_mean, 6) << " deg/m (IQR " << fmt(r.rot_deg_per_m_iqr, 6) << "), " << r.n_segments
      << " segments\n";
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOpts {
  Common common;
  DatasetOpts data;
  SearchOpts search;
  std::string resolutions{"0.8,0.4,0.2"};
  double res_theta{0.05};
  double extent{32.0};
  double beta{100.0};
  int repetitions{3};
  int warmup{1};
  int max_pairs{0};
  std::string out;
};

CLI::App* setup_sweep(CLI::App& app, SweepOpts& o) {
  CLI::App* c = app.add_subcommand("sweep", "Raw-scan matching error and runtime across grid resolutions");
  add_common(c, o.common);
  add_dataset(c, o.data, "Use this sequence only (-1: all)");
  add_search(c, o.search);
  c->add_option("--resolutions", o.resolutions, "Comma-separated raster and grid resolutions (m)")
      ->capture_default_str();
  c->add_option("--res-theta", o.res_theta, "Rotational grid resolution (rad)")->capture_default_str();
  c->add_option("--extent", o.extent, "Side of the Cartesian raster (m)")->capture_default_str();
  c->add_option("--beta", o.beta, "Softmax temperature")->capture_default_str();
  c->add_option("--repetitions", o.repetitions, "Timed passes over the pairs (0 skips timing)")->capture_default_str();
  c->add_option("--warmup", o.warmup, "Untimed passes before timing")->capture_default_str();
  c->add_option("--max-pairs", o.max_pairs, "Use at most this many pairs (0: all)")->capture_default_str();
  c->add_option("--out", o.out, "Sweep CSV to write")->required();
  return c;
}

void cmd_sweep(const SweepOpts& o, std::ostream& out) {
  check_output("--out", o.out);
  SweepConfig cfg;
  cfg.region = o.search.region();
  cfg.delta_theta = o.res_theta;
  cfg.extent = o.extent;
  cfg.beta = o.beta;
  cfg.timing = {o.repetitions, o.warmup, o.common.threads};
  if (o.repetitions < 0) throw ConfigError("--repetitions: must be non-negative");
  cfg.validate();
  if (o.warmup < 0) throw ConfigError("--warmup: must be >= 0");
  if (o.max_pairs < 0) throw ConfigError("--max-pairs: must be >= 0");
  const std::vector<double> res = parse_list("--resolutions", o.resolutions);
  for (double r : res) {
    if (!(r > 0.0)) throw ConfigError("--resolutions: values must be positive");
  }
  LoadedData data = load(o.data);
  if (o.max_pairs > 0 && static_cast<std::size_t>(o.max_pairs) < data.pairs.size()) {
    data.pairs.resize(static_cast<std::size_t>(o.max_pairs));
  }
  const std::vector<SweepRow> rows = sweep_resolution(data.pairs, res, cfg);
  StagedOutputs staged;
  write_sweep_csv(staged.add(o.out), rows);
  staged.commit();
  for (const SweepRow& r : rows) {
    out << "resolution " << fmt(r.resolution, 3) << " m: translation error " << fmt(r.trans_error_m) << " m, rotation error "
        << fmt(r.rot_error_rad, 5) << " rad\n";
  }
}

// ---------------------------------------------------------------------------
// Config files

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Turns `--config FILE` into `--key=value` arguments placed before the
/// command-line flags, so that later (command-line) occurrences win.
std::vector<std::string> expand_config(const CLI::App& app, const std::vector<std::string>& args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  try {
    sub = app.get_subcommand(args[0]);
  } catch (const CLI::OptionNotFound&) {
    return args;
  }
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream f(path);
  if (!f) throw ConfigError("--config: cannot read '" + path + "'");
  std::vector<std::string> expanded = {args[0]};
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key == "config") throw ConfigError(where + ": config files cannot include other config files");
    if (sub->get_option_no_throw("--" + key) == nullptr) {
      throw ConfigError(where + ": unknown key '" + key + "' for '" + sub->get_name() + "'");
    }
    expanded.push_back("--" + key + "=" + value);
  }
  expanded.insert(expanded.end(), args.begin() + 1, args.end());
  return expanded;
}

}  // namespace

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Correlative radar scan matching with learnt masks", "rcsm"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);
  app.footer("Flags on the command line override values read from --config.\n"
             "Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.");

  SimulateOpts sim;
  TrainOpts tr;
  OdometryOpts odo;
  CalibrateOpts cal;
  EvaluateOpts ev;
  SweepOpts sw;
  CLI::App* c_sim = setup_simulate(app, sim);
  CLI::App* c_train = setup_train(app, tr);
  CLI::App* c_odo = setup_odometry(app, odo);
  CLI::App* c_cal = setup_calibrate(app, cal);
  CLI::App* c_eval = setup_evaluate(app, ev);
  CLI::App* c_sweep = setup_sweep(app, sw);

  try {
    std::vector<std::string> args = expand_config(app, args_in);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (c_sim->parsed()) {
      ThreadCap cap(sim.common.threads);
      cmd_simulate(sim, out);
    } else if (c_train->parsed()) {
      ThreadCap cap(tr.common.threads);
      cmd_train(tr, out);
    } else if (c_odo->parsed()) {
      ThreadCap cap(odo.common.threads);
      cmd_odometry(odo, out);
    } else if (c_cal->parsed()) {
      ThreadCap cap(cal.common.threads);
      cmd_calibrate(cal, out);
    } else if (c_eval->parsed()) {
      ThreadCap cap(ev.common.threads);
      cmd_evaluate(ev, out);
    } else if (c_sweep->parsed()) {
      ThreadCap cap(sw.common.threads);
      cmd_sweep(sw, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace rcsm::cli
