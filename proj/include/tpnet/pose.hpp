#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tpnet/geometry.hpp"
#include "tpnet/rng.hpp"
#include "tpnet/tensor.hpp"
#include "tpnet/weights_io.hpp"

namespace tpnet {

// Fixed-length feature vector for one detection patch: a 16x16 grayscale
// resample plus normalized box geometry.
struct PatchFeatures {
  std::array<double, 256> pixels{};  // row-major, values in [0, 1]
  double aspect = 0.0;               // box width / height
  double area_frac = 0.0;            // box area / image area
  double center_offset = 0.0;        // (box center u - cx) / image width

  static constexpr int kLength = 259;
  std::vector<double> flatten() const;
};

struct PoseEstimate {
  Vec3 dims = Vec3::Zero();    // meters, positive
  double theta_local = 0.0;    // radians in (-pi, pi]
  double confidence = 1.0;

  void validate() const {
    if (dims.x() <= 0.0 || dims.y() <= 0.0 || dims.z() <= 0.0)
      throw ContractError("PoseEstimate: dimensions must be positive");
  }
};

// Gaussian perturbation magnitudes for the ground-truth oracle.
struct NoiseSpec {
  double sigma_dim = 0.0;    // meters, per axis
  double sigma_theta = 0.0;  // radians
};

// Ground-truth pose pass-through with optional Gaussian noise; the test
// double for the attention regressor. rng may be null when noise is zero.
PoseEstimate oracle_estimate(const Box3D& truth, double theta_local_truth,
                             const NoiseSpec& noise, Rng* rng = nullptr);

// ---- IMHA: two-layer multi-head-attention patch regressor ------------------

struct ImhaConfig {
  int d_token = 24;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 48;
  // single vehicle class; dimension head regresses offsets from this mean
  Vec3 class_mean_dims = Vec3(4.5, 1.8, 1.6);

  void validate() const;
};

WeightMap imha_init(const ImhaConfig& cfg, Rng& rng);

// Token construction: 16 tokens from 4x4 pixel blocks through a shared
// linear map (plus a learned per-block embedding unless add_positional is
// false) and one geometry token. Exposed for the permutation-invariance test.
Tensor imha_tokens(const PatchFeatures& patch, const WeightMap& W,
                   const ImhaConfig& cfg, bool add_positional = true);

// Attention stack + mean pool; [n_tokens, d] -> [1, d].
Tensor imha_pool(const Tensor& tokens, const WeightMap& W, const ImhaConfig& cfg);

// Full regressor: softplus-positive dimensions around the class mean and
// atan2-decoded orientation; confidence fixed at 1. Throws DivergenceError
// on non-finite weights.
PoseEstimate imha_regress(const PatchFeatures& patch, const WeightMap& W,
                          const ImhaConfig& cfg);

// Training objective: MSE on dimensions plus MSE on the (sin, cos) pair.
Tensor imha_loss(const PatchFeatures& patch, const Vec3& dims_true,
                 double theta_true, const WeightMap& W, const ImhaConfig& cfg);

struct PatchSample {
  PatchFeatures patch;
  Vec3 dims = Vec3::Zero();
  double theta_local = 0.0;
};

struct ImhaTrainResult {
  WeightMap weights;
  std::vector<double> loss_curve;
};

ImhaTrainResult imha_train(const std::vector<PatchSample>& data,
                           const ImhaConfig& cfg, int epochs, double lr,
                           std::uint64_t seed);

}  // namespace tpnet
