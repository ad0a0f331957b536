#include "tpnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace tpnet {

namespace {

// Scaled ground truth plus presence for one window's future block.
std::pair<std::vector<std::vector<Pos2>>, std::vector<std::vector<uint8_t>>>
future_targets(const TrajectoryWindow& w, const ScaleSpec& scale) {
  std::vector<std::vector<Pos2>> gt(static_cast<size_t>(w.f_steps));
  std::vector<std::vector<uint8_t>> mask(static_cast<size_t>(w.f_steps));
  for (int s = 0; s < w.f_steps; ++s) {
    gt[static_cast<size_t>(s)].resize(static_cast<size_t>(w.num_vehicles()), Pos2::Zero());
    mask[static_cast<size_t>(s)].resize(static_cast<size_t>(w.num_vehicles()), 0);
    for (int i = 0; i < w.num_vehicles(); ++i)
      if (w.present_future(s, i)) {
        gt[static_cast<size_t>(s)][static_cast<size_t>(i)] =
            scale.scale(w.future[static_cast<size_t>(s)][static_cast<size_t>(i)]);
        mask[static_cast<size_t>(s)][static_cast<size_t>(i)] = 1;
      }
  }
  return {std::move(gt), std::move(mask)};
}

}  // namespace

void TrainConfig::validate() const {
  if (learning_rate <= 0.0 || adam_beta1 <= 0.0 || adam_beta1 >= 1.0 ||
      adam_beta2 <= 0.0 || adam_beta2 >= 1.0 || adam_eps <= 0.0)
    throw ContractError("TrainConfig: optimizer rates out of range");
  if (batch_size < 1 || epochs < 1)
    throw ContractError("TrainConfig: batch_size and epochs must be positive");
  if (tf_ratio < 0.0 || tf_ratio > 1.0)
    throw ContractError("TrainConfig: tf_ratio must lie in [0, 1]");
}

Tensor mse_loss(const std::vector<Tensor>& pred,
                const std::vector<std::vector<Pos2>>& gt,
                const std::vector<std::vector<uint8_t>>& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw DimensionError("mse_loss: step count mismatch");
  int count = 0;
  Tensor acc = Tensor::scalar(0.0);
  for (size_t s = 0; s < pred.size(); ++s) {
    const int n = pred[s].rows();
    if (static_cast<size_t>(n) != gt[s].size() || static_cast<size_t>(n) != mask[s].size())
      throw DimensionError("mse_loss: vehicle count mismatch at step " + std::to_string(s));
    std::vector<double> gt_flat, mask_flat;
    gt_flat.reserve(static_cast<size_t>(n) * 2);
    mask_flat.reserve(static_cast<size_t>(n) * 2);
    for (int i = 0; i < n; ++i) {
      gt_flat.push_back(gt[s][static_cast<size_t>(i)].x());
      gt_flat.push_back(gt[s][static_cast<size_t>(i)].y());
      const double m = mask[s][static_cast<size_t>(i)] ? 1.0 : 0.0;
      mask_flat.push_back(m);
      mask_flat.push_back(m);
      count += mask[s][static_cast<size_t>(i)] ? 1 : 0;
    }
    Tensor target = Tensor::from({n, 2}, std::move(gt_flat));
    Tensor m = Tensor::from({n, 2}, std::move(mask_flat));
    acc = add(acc, sum(mul(square(sub(pred[s], target)), m)));
  }
  if (count == 0) throw ContractError("mse_loss: every entry is masked out");
  return scale(acc, 1.0 / count);
}

void adam_step(WeightMap& weights, AdamState& state, const TrainConfig& cfg) {
  cfg.validate();
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  for (auto& [name, w] : weights) {
    auto node = w.node();
    node->ensure_grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != node->grad.size()) m.assign(node->grad.size(), 0.0);
    if (v.size() != node->grad.size()) v.assign(node->grad.size(), 0.0);
    std::vector<double> delta(node->grad.size());
    for (size_t i = 0; i < node->grad.size(); ++i) {
      const double g = node->grad[i];
      if (!std::isfinite(g))
        throw DivergenceError("adam_step: non-finite gradient in " + name);
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      delta[i] = -cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
    w.apply_update(delta);
  }
  zero_grad(weights);
}

TrainResult train(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  if (data.windows.empty()) throw InputError("train: empty dataset");

  Rng root(tcfg.seed);
  Rng init_rng = root.fork(0xA11CE);
  Rng shuffle_rng = root.fork(0x5AFFE);
  Rng tf_rng = root.fork(0x7EAC);

  TrainResult result;
  result.weights = init_weights(mcfg, init_rng);
  AdamState adam;

  std::vector<size_t> order(data.windows.size());
  std::iota(order.begin(), order.end(), 0);

  auto checkpoint = [&](const std::string& tag) {
    if (tcfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(tcfg.checkpoint_dir);
    save_weights(result.weights, tcfg.checkpoint_dir + "/" + tag + ".json");
  };

  TrainConfig step_cfg = tcfg;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    if (tcfg.cosine_lr)
      step_cfg.learning_rate =
          tcfg.learning_rate *
          (0.1 + 0.45 * (1.0 + std::cos(M_PI * epoch / std::max(1, tcfg.epochs - 1))));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double epoch_loss = 0.0;
    int epoch_terms = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tcfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(tcfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      for (size_t k = start; k < stop; ++k) {
        const TrajectoryWindow& w = data.windows[order[k]];
        auto [gt, mask] = future_targets(w, data.scale);
        GradTape tape;
        EncodedState st = encode(w, data.scale, result.weights, mcfg);
        DecodeResult dec = decode(st, w, data.scale, result.weights, mcfg,
                                  tcfg.tf_ratio, &tf_rng);
        Tensor window_loss = mse_loss(dec.positions_scaled, gt, mask);
        const double lv = window_loss.value();
        if (!std::isfinite(lv)) {
          checkpoint("diverged");
          throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch));
        }
        epoch_loss += lv;
        ++epoch_terms;
        tape.backward(scale(window_loss, inv_batch));
      }
      adam_step(result.weights, adam, step_cfg);
    }
    result.loss_curve.push_back(epoch_loss / std::max(1, epoch_terms));
    checkpoint("epoch_" + std::to_string(epoch));
  }
  checkpoint("final");
  return result;
}

std::vector<double> rmse_by_horizon(const PosGrid& pred, const PosGrid& gt,
                                    const MaskGrid& mask, double dt) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw DimensionError("rmse_by_horizon: window count mismatch");
  if (dt <= 0.0) throw InputError("rmse_by_horizon: dt must be positive");
  size_t f_steps = 0;
  for (const auto& w : pred) f_steps = std::max(f_steps, w.size());
  const int horizon_s = static_cast<int>(std::floor(static_cast<double>(f_steps) * dt + 1e-9));

  std::vector<double> out;
  for (int sec = 1; sec <= horizon_s; ++sec) {
    const size_t step = static_cast<size_t>(std::lround(sec / dt)) - 1;
    double acc = 0.0;
    long n = 0;
    for (size_t wi = 0; wi < pred.size(); ++wi) {
      if (step >= pred[wi].size()) continue;
      const auto& ps = pred[wi][step];
      const auto& gs = gt[wi][step];
      const auto& ms = mask[wi][step];
      if (ps.size() != gs.size() || ps.size() != ms.size())
        throw DimensionError("rmse_by_horizon: vehicle count mismatch");
      for (size_t i = 0; i < ps.size(); ++i) {
        if (!ms[i]) continue;
        acc += (ps[i] - gs[i]).squaredNorm();
        ++n;
      }
    }
    out.push_back(n > 0 ? std::sqrt(acc / static_cast<double>(n))
                        : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

std::vector<std::vector<Pos2>> constant_velocity_baseline(const TrajectoryWindow& w) {
  const int n = w.num_vehicles();
  std::vector<Pos2> last(static_cast<size_t>(n), Pos2::Zero());
  std::vector<Pos2> vel(static_cast<size_t>(n), Pos2::Zero());
  for (int i = 0; i < n; ++i) {
    const int t1 = w.t_steps - 1;
    last[static_cast<size_t>(i)] = w.past[static_cast<size_t>(t1)][static_cast<size_t>(i)];
    if (t1 >= 1 && w.present_past(t1, i) && w.present_past(t1 - 1, i))
      vel[static_cast<size_t>(i)] =
          (w.past[static_cast<size_t>(t1)][static_cast<size_t>(i)] -
           w.past[static_cast<size_t>(t1 - 1)][static_cast<size_t>(i)]) /
          w.dt;
  }
  std::vector<std::vector<Pos2>> out(static_cast<size_t>(w.f_steps),
                                     std::vector<Pos2>(static_cast<size_t>(n)));
  for (int s = 0; s < w.f_steps; ++s)
    for (int i = 0; i < n; ++i)
      out[static_cast<size_t>(s)][static_cast<size_t>(i)] =
          last[static_cast<size_t>(i)] + vel[static_cast<size_t>(i)] * (w.dt * (s + 1));
  return out;
}

std::vector<DistanceBin> mde_iou_vs_distance(const std::vector<Box3D>& estimates,
                                             const std::vector<Box3D>& truths,
                                             double bin_width) {
  if (estimates.size() != truths.size())
    throw DimensionError("mde_iou_vs_distance: list size mismatch");
  if (bin_width <= 0.0) throw InputError("mde_iou_vs_distance: bin width must be positive");
  std::map<int, DistanceBin> bins;
  for (size_t i = 0; i < estimates.size(); ++i) {
    const Box3D& t = truths[i];
    const double dist = std::hypot(t.translation.x(), t.translation.z());
    const int idx = static_cast<int>(std::floor(dist / bin_width));
    DistanceBin& b = bins[idx];
    if (b.count == 0) {
      b.lo = idx * bin_width;
      b.hi = (idx + 1) * bin_width;
    }
    b.mde += (estimates[i].translation - t.translation).norm();
    b.iou += iou3d(estimates[i], t);
    b.count += 1;
  }
  std::vector<DistanceBin> out;
  for (auto& [idx, b] : bins) {
    b.mde /= b.count;
    b.iou /= b.count;
    out.push_back(b);
  }
  return out;
}

EvalReport evaluate(const Dataset& data, const WeightMap& weights,
                    const ModelConfig& cfg) {
  if (data.windows.empty()) throw InputError("evaluate: empty dataset");
  PosGrid pred, gtg, cvg;
  MaskGrid mask;
  for (const auto& w : data.windows) {
    pred.push_back(predict_window(w, data.scale, weights, cfg));
    cvg.push_back(constant_velocity_baseline(w));
    std::vector<std::vector<Pos2>> gt(static_cast<size_t>(w.f_steps));
    std::vector<std::vector<uint8_t>> m(static_cast<size_t>(w.f_steps));
    for (int s = 0; s < w.f_steps; ++s) {
      gt[static_cast<size_t>(s)] = w.future[static_cast<size_t>(s)];
      m[static_cast<size_t>(s)] = w.present[static_cast<size_t>(w.t_steps + s)];
    }
    gtg.push_back(std::move(gt));
    mask.push_back(std::move(m));
  }
  EvalReport rep;
  rep.rmse = rmse_by_horizon(pred, gtg, mask, data.windows.front().dt);
  rep.cv_rmse = rmse_by_horizon(cvg, gtg, mask, data.windows.front().dt);
  for (size_t i = 0; i < rep.rmse.size(); ++i)
    rep.horizon_seconds.push_back(static_cast<double>(i + 1));
  rep.n_windows = static_cast<int>(data.windows.size());
  return rep;
}

AblationVariant ablation_from_string(const std::string& s) {
  if (s == "control") return AblationVariant::Control;
  if (s == "tp") return AblationVariant::TP;
  if (s == "est") return AblationVariant::EST;
  if (s == "dst") return AblationVariant::DST;
  throw InputError("unknown ablation variant: " + s +
                   " (expected control|tp|est|dst)");
}

std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::Control: return "control";
    case AblationVariant::TP: return "tp";
    case AblationVariant::EST: return "est";
    case AblationVariant::DST: return "dst";
  }
  return "control";
}

ModelConfig apply_ablation(const ModelConfig& base, AblationVariant v) {
  ModelConfig cfg = base;
  if (v == AblationVariant::EST) cfg.no_encoder_stmha = true;
  if (v == AblationVariant::DST) cfg.no_decoder_stmha = true;
  return cfg;
}

AblationOutcome run_ablation(AblationVariant v, const Dataset& train_data,
                             const Dataset& eval_data, const ModelConfig& mcfg,
                             const TrainConfig& tcfg) {
  const ModelConfig cfg = apply_ablation(mcfg, v);
  AblationOutcome out;
  out.variant = v;
  out.trained = train(train_data, cfg, tcfg);
  out.report = evaluate(eval_data, out.trained.weights, cfg);
  return out;
}

}  // namespace tpnet
