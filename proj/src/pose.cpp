#include "tpnet/pose.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tpnet/stmha.hpp"
#include "tpnet/training.hpp"

namespace tpnet {

namespace {

constexpr int kBlocks = 16;     // 4x4 grid of 4x4-pixel blocks
constexpr int kBlockLen = 16;   // pixels per block
constexpr double kMinDim = 0.05;

Tensor uniform_param(Rng& rng, Shape shape, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::param(std::move(shape));
  for (auto& v : t.node()->values) v = rng.uniform(-bound, bound);
  return t;
}

void init_mha_block(WeightMap& W, Rng& rng, const std::string& prefix, int width,
                    int n_heads) {
  const int d_head = width / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    W.emplace(hp + ".wq", uniform_param(rng, {width, d_head}, width));
    W.emplace(hp + ".wk", uniform_param(rng, {width, d_head}, width));
    W.emplace(hp + ".wv", uniform_param(rng, {width, d_head}, width));
  }
  W.emplace(prefix + ".wo", uniform_param(rng, {width, width}, width));
  W.emplace(prefix + ".bo", Tensor::param({width}));
}

void init_norm(WeightMap& W, const std::string& prefix, int width) {
  W.emplace(prefix + ".g", Tensor::param({width}, std::vector<double>(width, 1.0)));
  W.emplace(prefix + ".b", Tensor::param({width}));
}

const Tensor& get(const WeightMap& W, const std::string& name) {
  auto it = W.find(name);
  if (it == W.end()) throw ContractError("missing weight tensor: " + name);
  return it->second;
}

Tensor affine_norm(const WeightMap& W, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, get(W, prefix + ".g"), get(W, prefix + ".b"));
}

double inv_softplus(double y) { return std::log(std::expm1(y)); }

Tensor head_mlp(const WeightMap& W, const std::string& prefix, const Tensor& x) {
  Tensor inner = relu(add(matmul(x, get(W, prefix + ".w1")), get(W, prefix + ".b1")));
  return add(matmul(inner, get(W, prefix + ".w2")), get(W, prefix + ".b2"));
}

Tensor pose_outputs(const PatchFeatures& patch, const WeightMap& W,
                    const ImhaConfig& cfg) {
  Tensor pooled = imha_pool(imha_tokens(patch, W, cfg), W, cfg);
  Tensor bias = Tensor::from({3}, {inv_softplus(cfg.class_mean_dims.x()),
                                   inv_softplus(cfg.class_mean_dims.y()),
                                   inv_softplus(cfg.class_mean_dims.z())});
  Tensor dims = softplus(add(head_mlp(W, "imha.dims", pooled), bias));
  Tensor ang = head_mlp(W, "imha.ang", pooled);
  return concat_cols(dims, ang);  // [1, 5]: (dx, dy, dz, sin, cos)
}

}  // namespace

std::vector<double> PatchFeatures::flatten() const {
  std::vector<double> v(pixels.begin(), pixels.end());
  v.push_back(aspect);
  v.push_back(area_frac);
  v.push_back(center_offset);
  return v;
}

PoseEstimate oracle_estimate(const Box3D& truth, double theta_local_truth,
                             const NoiseSpec& noise, Rng* rng) {
  PoseEstimate est;
  est.dims = truth.dims;
  est.theta_local = wrap_angle(theta_local_truth);
  est.confidence = 1.0;
  if (rng != nullptr && (noise.sigma_dim > 0.0 || noise.sigma_theta > 0.0)) {
    for (int i = 0; i < 3; ++i)
      est.dims(i) = std::max(kMinDim, est.dims(i) + rng->normal(0.0, noise.sigma_dim));
    est.theta_local = wrap_angle(est.theta_local + rng->normal(0.0, noise.sigma_theta));
  }
  est.validate();
  return est;
}

void ImhaConfig::validate() const {
  if (d_token <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0)
    throw ContractError("ImhaConfig: all sizes must be positive");
  if (d_token % n_heads != 0)
    throw ContractError("ImhaConfig: d_token must be divisible by n_heads");
  if (class_mean_dims.minCoeff() <= 0.0)
    throw ContractError("ImhaConfig: class mean dims must be positive");
}

WeightMap imha_init(const ImhaConfig& cfg, Rng& rng) {
  cfg.validate();
  WeightMap W;
  W.emplace("imha.patch.w", uniform_param(rng, {kBlockLen, cfg.d_token}, kBlockLen));
  W.emplace("imha.patch.b", Tensor::param({cfg.d_token}));
  W.emplace("imha.posemb", uniform_param(rng, {kBlocks, cfg.d_token}, kBlocks));
  W.emplace("imha.geom.w", uniform_param(rng, {3, cfg.d_token}, 3));
  W.emplace("imha.geom.b", Tensor::param({cfg.d_token}));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = "imha.l" + std::to_string(l);
    init_mha_block(W, rng, lp + ".mha", cfg.d_token, cfg.n_heads);
    init_norm(W, lp + ".n1", cfg.d_token);
    W.emplace(lp + ".ffn.w1", uniform_param(rng, {cfg.d_token, cfg.d_ff}, cfg.d_token));
    W.emplace(lp + ".ffn.b1", Tensor::param({cfg.d_ff}));
    W.emplace(lp + ".ffn.w2", uniform_param(rng, {cfg.d_ff, cfg.d_token}, cfg.d_ff));
    W.emplace(lp + ".ffn.b2", Tensor::param({cfg.d_token}));
    init_norm(W, lp + ".n2", cfg.d_token);
  }
  W.emplace("imha.dims.w1", uniform_param(rng, {cfg.d_token, cfg.d_token}, cfg.d_token));
  W.emplace("imha.dims.b1", Tensor::param({cfg.d_token}));
  W.emplace("imha.dims.w2", uniform_param(rng, {cfg.d_token, 3}, cfg.d_token));
  W.emplace("imha.dims.b2", Tensor::param({3}));
  W.emplace("imha.ang.w1", uniform_param(rng, {cfg.d_token, cfg.d_token}, cfg.d_token));
  W.emplace("imha.ang.b1", Tensor::param({cfg.d_token}));
  W.emplace("imha.ang.w2", uniform_param(rng, {cfg.d_token, 2}, cfg.d_token));
  W.emplace("imha.ang.b2", Tensor::param({2}));
  return W;
}

Tensor imha_tokens(const PatchFeatures& patch, const WeightMap& W,
                   const ImhaConfig& cfg, bool add_positional) {
  cfg.validate();
  // rows = flattened 4x4 pixel blocks in raster order
  std::vector<double> blocks(static_cast<size_t>(kBlocks) * kBlockLen);
  for (int b = 0; b < kBlocks; ++b) {
    const int r0 = (b / 4) * 4, c0 = (b % 4) * 4;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        blocks[static_cast<size_t>(b) * kBlockLen + r * 4 + c] =
            patch.pixels[static_cast<size_t>(r0 + r) * 16 + (c0 + c)];
  }
  Tensor P = Tensor::from({kBlocks, kBlockLen}, std::move(blocks));
  Tensor tok = add(matmul(P, get(W, "imha.patch.w")), get(W, "imha.patch.b"));
  if (add_positional) tok = add(tok, get(W, "imha.posemb"));
  Tensor geom_in = Tensor::from({1, 3}, {patch.aspect, patch.area_frac, patch.center_offset});
  Tensor geom = add(matmul(geom_in, get(W, "imha.geom.w")), get(W, "imha.geom.b"));
  return concat_rows({tok, geom});
}

Tensor imha_pool(const Tensor& tokens, const WeightMap& W, const ImhaConfig& cfg) {
  const int n = tokens.rows();
  Tensor ones = Tensor::from({n, n}, std::vector<double>(static_cast<size_t>(n) * n, 1.0));
  Tensor x = tokens;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = "imha.l" + std::to_string(l);
    x = affine_norm(W, lp + ".n1",
                    add(mha(W, lp + ".mha", cfg.n_heads, x, x, ones, false), x));
    Tensor inner =
        relu(add(matmul(x, get(W, lp + ".ffn.w1")), get(W, lp + ".ffn.b1")));
    Tensor out = add(matmul(inner, get(W, lp + ".ffn.w2")), get(W, lp + ".ffn.b2"));
    x = affine_norm(W, lp + ".n2", add(out, x));
  }
  return reshape(mean_rows(x), {1, cfg.d_token});
}

PoseEstimate imha_regress(const PatchFeatures& patch, const WeightMap& W,
                          const ImhaConfig& cfg) {
  check_finite(W, "imha_regress");
  Tensor out = pose_outputs(patch, W, cfg);
  PoseEstimate est;
  est.dims = Vec3(out.at(0, 0), out.at(0, 1), out.at(0, 2));
  est.theta_local = wrap_angle(std::atan2(out.at(0, 3), out.at(0, 4)));
  est.confidence = 1.0;
  est.validate();
  return est;
}

Tensor imha_loss(const PatchFeatures& patch, const Vec3& dims_true,
                 double theta_true, const WeightMap& W, const ImhaConfig& cfg) {
  Tensor out = pose_outputs(patch, W, cfg);
  Tensor target = Tensor::from({1, 5}, {dims_true.x(), dims_true.y(), dims_true.z(),
                              std::sin(theta_true), std::cos(theta_true)});
  return mean(square(sub(out, target)));
}

ImhaTrainResult imha_train(const std::vector<PatchSample>& data,
                           const ImhaConfig& cfg, int epochs, double lr,
                           std::uint64_t seed) {
  if (data.empty()) throw InputError("imha_train: empty dataset");
  if (epochs <= 0 || lr <= 0.0)
    throw ContractError("imha_train: epochs and lr must be positive");
  Rng root(seed);
  Rng init_rng = root.fork(0xA11CE);
  Rng shuffle_rng = root.fork(0x5AFFE);
  ImhaTrainResult result;
  result.weights = imha_init(cfg, init_rng);

  TrainConfig tc;
  tc.learning_rate = lr;
  AdamState adam;
  const int batch = std::min<int>(16, static_cast<int>(data.size()));
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < epochs; ++epoch) {
    // cosine decay to 10% of the initial rate over the run
    const double phase = M_PI * epoch / std::max(1, epochs - 1);
    tc.learning_rate = lr * (0.1 + 0.45 * (1.0 + std::cos(phase)));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(
          shuffle_rng.uniform_int(0, static_cast<long long>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(batch));
      const double inv = 1.0 / static_cast<double>(end - start);
      for (size_t i = start; i < end; ++i) {
        const PatchSample& s = data[order[i]];
        GradTape tape;
        Tensor loss = imha_loss(s.patch, s.dims, s.theta_local, result.weights, cfg);
        epoch_loss += loss.value();
        tape.backward(scale(loss, inv));
      }
      adam_step(result.weights, adam, tc);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  return result;
}

}  // namespace tpnet
