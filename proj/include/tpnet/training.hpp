#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tpnet/geometry.hpp"
#include "tpnet/stmha.hpp"
#include "tpnet/tracks.hpp"
#include "tpnet/weights_io.hpp"

namespace tpnet {

struct TrainConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int epochs = 100;
  double tf_ratio = 0.5;
  bool cosine_lr = false;  // decay the rate to 10% over the epochs
  std::uint64_t seed = 42;
  std::string checkpoint_dir;  // per-epoch weight dumps when non-empty

  void validate() const;
};

struct AdamState {
  std::map<std::string, std::vector<double>> m;  // first moment per tensor
  std::map<std::string, std::vector<double>> v;  // second moment per tensor
  long long t = 0;
};

struct Dataset {
  std::vector<TrajectoryWindow> windows;
  ScaleSpec scale;
};

struct TrainResult {
  WeightMap weights;
  std::vector<double> loss_curve;  // mean training loss per epoch, scaled space
};

struct DistanceBin {
  double lo = 0.0, hi = 0.0;
  int count = 0;
  double mde = 0.0;  // mean translation error, meters
  double iou = 0.0;  // mean volumetric IoU
};

struct EvalReport {
  std::vector<double> horizon_seconds;
  std::vector<double> rmse;     // model, meters
  std::vector<double> cv_rmse;  // constant-velocity baseline, meters
  std::vector<DistanceBin> mde_iou;
  int n_windows = 0;
};

// Positions indexed [window][step][vehicle]; masks mirror that layout.
using PosGrid = std::vector<std::vector<std::vector<Pos2>>>;
using MaskGrid = std::vector<std::vector<std::vector<uint8_t>>>;

// Mean squared Euclidean error over masked-in (step, vehicle) entries in
// scaled space; the training objective. Throws on an all-masked grid.
Tensor mse_loss(const std::vector<Tensor>& pred,
                const std::vector<std::vector<Pos2>>& gt,
                const std::vector<std::vector<uint8_t>>& mask);

// One Adam update consuming the accumulated gradients (which are then
// cleared). Non-finite gradients raise DivergenceError naming the tensor.
void adam_step(WeightMap& weights, AdamState& state, const TrainConfig& cfg);

// Shuffled minibatch training with per-(window, step) teacher-forcing coins.
// Deterministic for a fixed seed. Non-finite loss aborts with a final
// checkpoint (when a checkpoint dir is set).
TrainResult train(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg);

// RMSE at each whole prediction second (Euclidean displacement convention)
// over every masked-in (window, vehicle) sample; unscaled meters in, meters
// out. Horizon steps with no samples report NaN.
std::vector<double> rmse_by_horizon(const PosGrid& pred, const PosGrid& gt,
                                    const MaskGrid& mask, double dt);

// Extrapolates each vehicle's last observed velocity; single-step history
// falls back to zero velocity.
std::vector<std::vector<Pos2>> constant_velocity_baseline(const TrajectoryWindow& w);

// 5 m bins over ground distance from the ego camera; empty bins are omitted.
std::vector<DistanceBin> mde_iou_vs_distance(const std::vector<Box3D>& estimates,
                                             const std::vector<Box3D>& truths,
                                             double bin_width = 5.0);

// Closed-loop evaluation of a weight set against ground truth, with the CV
// baseline on the same samples.
EvalReport evaluate(const Dataset& data, const WeightMap& weights,
                    const ModelConfig& cfg);

enum class AblationVariant { Control, TP, EST, DST };

AblationVariant ablation_from_string(const std::string& s);
std::string to_string(AblationVariant v);

// Applies the structural part of a variant to a model config (EST drops the
// encoder STMHA stack, DST the decoder STMHA block). TP is data-level: the
// caller trains on GT trajectories instead of geometry-recovered ones.
ModelConfig apply_ablation(const ModelConfig& base, AblationVariant v);

struct AblationOutcome {
  AblationVariant variant;
  TrainResult trained;
  EvalReport report;
};

// Trains and evaluates one variant. `data` should already reflect the TP
// choice (GT vs recovered trajectories); identical seeds/config otherwise.
AblationOutcome run_ablation(AblationVariant v, const Dataset& train_data,
                             const Dataset& eval_data, const ModelConfig& mcfg,
                             const TrainConfig& tcfg);

}  // namespace tpnet
