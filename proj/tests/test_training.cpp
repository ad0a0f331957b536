#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tpnet/rng.hpp"
#include "tpnet/training.hpp"

using namespace tpnet;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.stack_depth = 2;
  cfg.d_ff = 16;
  cfg.lstm_hidden = 8;
  cfg.t_steps = 4;
  cfg.f_steps = 4;
  cfg.d_near = 15.0;
  return cfg;
}

// Small corpus of straight-line movers with slight curvature.
Dataset toy_dataset(int n_vehicles, int frames, int t_steps, int f_steps) {
  std::vector<Observation> rows;
  Rng rng(777);
  for (int id = 1; id <= n_vehicles; ++id) {
    const double x0 = rng.uniform(-6.0, 6.0);
    const double y0 = rng.uniform(5.0, 15.0);
    const double vy = rng.uniform(6.0, 12.0);
    const double ax = rng.uniform(-0.2, 0.2);
    for (int f = 0; f < frames; ++f) {
      const double t = 0.5 * f;
      rows.push_back({f, id, Pos2(x0 + 0.5 * ax * t * t, y0 + vy * t)});
    }
  }
  Dataset d;
  auto ts = assemble(rows, 0.5);
  d.windows = windows_from_tracks(ts, t_steps, f_steps, 30.0, 16, 2);
  d.scale = fit_scale(d.windows);
  return d;
}

size_t param_count(const WeightMap& w) {
  size_t n = 0;
  for (const auto& [name, t] : w) n += static_cast<size_t>(t.size());
  return n;
}

}  // namespace

TEST_CASE("mse_loss: zero for perfect predictions, 25 for a (3,4) miss") {
  std::vector<Tensor> pred = {Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0})};
  std::vector<std::vector<Pos2>> gt = {{Pos2(1.0, 2.0), Pos2(3.0, 4.0)}};
  std::vector<std::vector<uint8_t>> mask = {{1, 1}};
  CHECK(mse_loss(pred, gt, mask).value() == 0.0);

  // one vehicle off by (3, 4) -> squared Euclidean 25, averaged over 1 entry
  std::vector<std::vector<uint8_t>> only_first = {{1, 0}};
  std::vector<std::vector<Pos2>> gt2 = {{Pos2(4.0, 6.0), Pos2(0.0, 0.0)}};
  CHECK(mse_loss(pred, gt2, only_first).value() == doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("mse_loss matches the scalar-loop oracle on 100 random cases") {
  Rng rng(81);
  for (int trial = 0; trial < 100; ++trial) {
    const int steps = rng.uniform_int(1, 5), n = rng.uniform_int(1, 6);
    std::vector<Tensor> pred;
    std::vector<std::vector<Pos2>> gt(static_cast<size_t>(steps));
    std::vector<std::vector<uint8_t>> mask(static_cast<size_t>(steps));
    double acc = 0.0;
    int count = 0;
    bool any = false;
    for (int s = 0; s < steps; ++s) {
      Tensor p = Tensor::zeros({n, 2});
      for (auto& v : p.node()->values) v = rng.uniform(-2, 2);
      pred.push_back(p);
      for (int i = 0; i < n; ++i) {
        const Pos2 g(rng.uniform(-2, 2), rng.uniform(-2, 2));
        gt[static_cast<size_t>(s)].push_back(g);
        const bool m = rng.bernoulli(0.7);
        mask[static_cast<size_t>(s)].push_back(m ? 1 : 0);
        if (m) {
          const double dx = p.at(i, 0) - g.x(), dy = p.at(i, 1) - g.y();
          acc += dx * dx + dy * dy;
          ++count;
          any = true;
        }
      }
    }
    if (!any) {
      CHECK_THROWS_AS(mse_loss(pred, gt, mask), ContractError);
      continue;
    }
    CHECK(std::abs(mse_loss(pred, gt, mask).value() - acc / count) < 1e-12);
  }
}

TEST_CASE("adam fixed point: zero gradients leave weights unchanged") {
  WeightMap w;
  w.emplace("a", Tensor::param({3}, {1.0, -2.0, 0.5}));
  AdamState st;
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  zero_grad(w);
  w.at("a").node()->ensure_grad();
  adam_step(w, st, cfg);
  CHECK(w.at("a").at(0) == 1.0);
  CHECK(w.at("a").at(1) == -2.0);
  CHECK(w.at("a").at(2) == 0.5);
  CHECK(st.t == 1);
}

TEST_CASE("adam with a constant gradient approaches lr-sized signed steps") {
  WeightMap w;
  w.emplace("a", Tensor::param({2}, {0.0, 0.0}));
  AdamState st;
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  auto push_grad = [&] {
    auto n = w.at("a").node();
    n->ensure_grad();
    n->grad[0] = 2.5;    // positive gradient -> weight decreases
    n->grad[1] = -0.3;   // negative gradient -> weight increases
  };
  for (int i = 0; i < 200; ++i) {
    push_grad();
    adam_step(w, st, cfg);
  }
  const double a0 = w.at("a").at(0), a1 = w.at("a").at(1);
  for (int i = 0; i < 100; ++i) {
    push_grad();
    adam_step(w, st, cfg);
  }
  CHECK((a0 - w.at("a").at(0)) / 100.0 == doctest::Approx(cfg.learning_rate).epsilon(0.05));
  CHECK((w.at("a").at(1) - a1) / 100.0 == doctest::Approx(cfg.learning_rate).epsilon(0.05));
}

TEST_CASE("adam converges on a 2-parameter quadratic bowl") {
  WeightMap w;
  w.emplace("x", Tensor::param({2}, {5.0, -4.0}));
  AdamState st;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  const Tensor target = Tensor::from({2}, {3.0, -1.0});
  const Tensor curv = Tensor::from({2}, {1.0, 2.0});
  int steps = 0;
  for (; steps < 5000; ++steps) {
    zero_grad(w);
    {
      GradTape tape;
      Tensor loss = sum(mul(square(sub(w.at("x"), target)), curv));
      tape.backward(loss);
    }
    adam_step(w, st, cfg);
    const double err = std::hypot(w.at("x").at(0) - 3.0, w.at("x").at(1) + 1.0);
    if (err < 1e-6) break;
  }
  CAPTURE(steps);
  CHECK(steps < 5000);
}

TEST_CASE("adam rejects non-finite gradients naming the tensor") {
  WeightMap w;
  w.emplace("bad_tensor", Tensor::param({1}, {1.0}));
  auto n = w.at("bad_tensor").node();
  n->ensure_grad();
  n->grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState st;
  TrainConfig cfg;
  try {
    adam_step(w, st, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("bad_tensor") != std::string::npos);
  }
}

TEST_CASE("rmse_by_horizon: zeros when perfect, 1.0 for a 1 m offset") {
  PosGrid gt(3);
  Rng rng(82);
  for (auto& w : gt) {
    w.resize(4);  // 4 future steps at dt=0.5 -> horizons 1 s and 2 s
    for (auto& s : w)
      for (int i = 0; i < 3; ++i) s.push_back(Pos2(rng.uniform(-5, 5), rng.uniform(0, 40)));
  }
  MaskGrid mask(3, std::vector<std::vector<uint8_t>>(4, std::vector<uint8_t>(3, 1)));
  auto zeros = rmse_by_horizon(gt, gt, mask, 0.5);
  REQUIRE(zeros.size() == 2);
  CHECK(zeros[0] == 0.0);
  CHECK(zeros[1] == 0.0);

  PosGrid off = gt;
  for (auto& w : off)
    for (auto& s : w)
      for (auto& p : s) p.x() += 1.0;
  auto ones = rmse_by_horizon(off, gt, mask, 0.5);
  CHECK(ones[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ones[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rmse_by_horizon matches the scalar-loop oracle on 100 random cases") {
  Rng rng(83);
  for (int trial = 0; trial < 100; ++trial) {
    const int wins = rng.uniform_int(1, 4);
    const int steps = rng.uniform_int(2, 8);
    const double dt = 0.5;
    PosGrid pred(static_cast<size_t>(wins)), gt(static_cast<size_t>(wins));
    MaskGrid mask(static_cast<size_t>(wins));
    for (int wi = 0; wi < wins; ++wi) {
      const int n = rng.uniform_int(1, 5);
      pred[static_cast<size_t>(wi)].resize(static_cast<size_t>(steps));
      gt[static_cast<size_t>(wi)].resize(static_cast<size_t>(steps));
      mask[static_cast<size_t>(wi)].resize(static_cast<size_t>(steps));
      for (int s = 0; s < steps; ++s)
        for (int i = 0; i < n; ++i) {
          pred[static_cast<size_t>(wi)][static_cast<size_t>(s)].push_back(
              Pos2(rng.uniform(-5, 5), rng.uniform(-5, 5)));
          gt[static_cast<size_t>(wi)][static_cast<size_t>(s)].push_back(
              Pos2(rng.uniform(-5, 5), rng.uniform(-5, 5)));
          mask[static_cast<size_t>(wi)][static_cast<size_t>(s)].push_back(
              rng.bernoulli(0.8) ? 1 : 0);
        }
    }
    const auto ours = rmse_by_horizon(pred, gt, mask, dt);
    const int horizon = static_cast<int>(std::floor(steps * dt + 1e-9));
    REQUIRE(static_cast<int>(ours.size()) == horizon);
    for (int sec = 1; sec <= horizon; ++sec) {
      const int step = static_cast<int>(std::lround(sec / dt)) - 1;
      double acc = 0.0;
      long cnt = 0;
      for (int wi = 0; wi < wins; ++wi)
        for (size_t i = 0; i < pred[static_cast<size_t>(wi)][static_cast<size_t>(step)].size();
             ++i) {
          if (!mask[static_cast<size_t>(wi)][static_cast<size_t>(step)][i]) continue;
          const Pos2 d = pred[static_cast<size_t>(wi)][static_cast<size_t>(step)][i] -
                         gt[static_cast<size_t>(wi)][static_cast<size_t>(step)][i];
          acc += d.x() * d.x() + d.y() * d.y();
          ++cnt;
        }
      if (cnt == 0) {
        CHECK(std::isnan(ours[static_cast<size_t>(sec - 1)]));
      } else {
        CHECK(std::abs(ours[static_cast<size_t>(sec - 1)] - std::sqrt(acc / cnt)) < 1e-12);
      }
    }
  }
}

TEST_CASE("constant-velocity baseline is exact on constant speed, quadratic under acceleration") {
  TrajectoryWindow w;
  w.t_steps = 4;
  w.f_steps = 4;
  w.dt = 0.5;
  w.vehicle_ids = {1};
  w.past.assign(4, {Pos2::Zero()});
  w.future.assign(4, {Pos2::Zero()});
  w.present.assign(8, {1});
  // constant velocity (3, 8) m/s
  for (int t = 0; t < 4; ++t) w.past[static_cast<size_t>(t)][0] = Pos2(3.0, 8.0) * (0.5 * t);
  for (int s = 0; s < 4; ++s)
    w.future[static_cast<size_t>(s)][0] = Pos2(3.0, 8.0) * (0.5 * (4 + s));
  auto pred = constant_velocity_baseline(w);
  for (int s = 0; s < 4; ++s)
    CHECK((pred[static_cast<size_t>(s)][0] - w.future[static_cast<size_t>(s)][0]).norm() < 1e-9);

  // constant acceleration: error at horizon h grows ~ h^2
  TrajectoryWindow wa = w;
  const double a = 2.0;
  auto pos_at = [&](double t) { return Pos2(0.0, 0.5 * a * t * t); };
  for (int t = 0; t < 4; ++t) wa.past[static_cast<size_t>(t)][0] = pos_at(0.5 * t);
  for (int s = 0; s < 4; ++s) wa.future[static_cast<size_t>(s)][0] = pos_at(0.5 * (4 + s));
  auto preda = constant_velocity_baseline(wa);
  std::vector<double> errs;
  for (int s = 0; s < 4; ++s)
    errs.push_back((preda[static_cast<size_t>(s)][0] - wa.future[static_cast<size_t>(s)][0]).norm());
  // analytic error: 0.5*a*(h^2 + h*dt) with h = dt*(s+1); ratios confirm super-linear growth
  for (int s = 0; s < 4; ++s) {
    const double h = 0.5 * (s + 1);
    CHECK(errs[static_cast<size_t>(s)] == doctest::Approx(0.5 * a * (h * h + h * 0.5)).epsilon(1e-9));
  }

  // single-step history -> zero-velocity fallback
  TrajectoryWindow w1 = w;
  w1.t_steps = 1;
  w1.past = {{Pos2(2.0, 5.0)}};
  w1.present.assign(5, {1});
  auto pred1 = constant_velocity_baseline(w1);
  for (const auto& s : pred1) CHECK((s[0] - Pos2(2.0, 5.0)).norm() == 0.0);
}

TEST_CASE("mde_iou binning: perfect estimates, 30 m boundary, absent bins") {
  std::vector<Box3D> truths;
  Box3D b;
  b.dims = Vec3(4.0, 2.0, 1.5);
  b.translation = Vec3(3.0, 0.5, 7.0);
  truths.push_back(b);
  b.translation = Vec3(0.0, 0.5, 30.0);  // exactly 30 -> bin [30, 35)
  truths.push_back(b);
  auto bins = mde_iou_vs_distance(truths, truths);
  REQUIRE(bins.size() == 2);
  CHECK(bins[0].lo == doctest::Approx(5.0));
  CHECK(bins[0].mde == 0.0);
  CHECK(bins[0].iou == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bins[1].lo == doctest::Approx(30.0));
  CHECK(bins[1].hi == doctest::Approx(35.0));
  // bins between 10 and 30 are absent, not zero
  for (const auto& bin : bins) CHECK(bin.count > 0);
}

TEST_CASE("training is seed-deterministic and reduces the loss") {
  Dataset data = toy_dataset(3, 16, 4, 4);
  REQUIRE(!data.windows.empty());
  ModelConfig mcfg = toy_config();
  TrainConfig tcfg;
  tcfg.learning_rate = 3e-3;
  tcfg.batch_size = 8;
  tcfg.epochs = 6;
  tcfg.seed = 5;
  TrainResult r1 = train(data, mcfg, tcfg);
  TrainResult r2 = train(data, mcfg, tcfg);
  REQUIRE(r1.loss_curve.size() == 6);
  for (size_t i = 0; i < r1.loss_curve.size(); ++i)
    CHECK(r1.loss_curve[i] == r2.loss_curve[i]);  // bit identical
  for (const auto& [name, t] : r1.weights)
    for (int i = 0; i < t.size(); ++i) CHECK(t.at(i) == r2.weights.at(name).at(i));
  CHECK(r1.loss_curve.back() < r1.loss_curve.front());
}

TEST_CASE("evaluate applies the unscale exactly once") {
  Dataset data = toy_dataset(2, 14, 4, 4);
  REQUIRE(!data.windows.empty());
  ModelConfig mcfg = toy_config();
  Rng rng(84);
  WeightMap W = init_weights(mcfg, rng);
  // zero the output head: closed-loop predictions freeze at the anchor
  W.at("dec.out.w").set_values(std::vector<double>(static_cast<size_t>(mcfg.lstm_hidden * 2), 0.0));
  W.at("dec.out.b").set_values({0.0, 0.0});
  EvalReport rep = evaluate(data, W, mcfg);

  // oracle in meters: displacement of the GT future from the anchor position
  const double dt = data.windows.front().dt;
  const int horizon = static_cast<int>(rep.rmse.size());
  for (int sec = 1; sec <= horizon; ++sec) {
    const int step = static_cast<int>(std::lround(sec / dt)) - 1;
    double acc = 0.0;
    long cnt = 0;
    for (const auto& w : data.windows)
      for (int i = 0; i < w.num_vehicles(); ++i) {
        if (!w.present_future(step, i)) continue;
        const Pos2 anchor = w.past[static_cast<size_t>(w.t_steps - 1)][static_cast<size_t>(i)];
        const Pos2 d = anchor - w.future[static_cast<size_t>(step)][static_cast<size_t>(i)];
        acc += d.squaredNorm();
        ++cnt;
      }
    REQUIRE(cnt > 0);
    CHECK(rep.rmse[static_cast<size_t>(sec - 1)] ==
          doctest::Approx(std::sqrt(acc / cnt)).epsilon(1e-9));
  }
}

TEST_CASE("teacher-forcing fraction over 10k steps is 0.5 +- 0.02") {
  ModelConfig cfg = toy_config();
  Rng rng(85);
  WeightMap W = init_weights(cfg, rng);
  Dataset data = toy_dataset(2, 14, 4, 4);
  REQUIRE(!data.windows.empty());
  const TrajectoryWindow& w = data.windows.front();
  EncodedState st = encode(w, data.scale, W, cfg);
  Rng tf(4242);
  long taught = 0, total = 0;
  while (total < 10000) {
    DecodeResult dec = decode(st, w, data.scale, W, cfg, 0.5, &tf);
    for (const auto& step : dec.used_teacher) {
      taught += step[0] != 0 ? 1 : 0;
      ++total;
    }
  }
  const double frac = static_cast<double>(taught) / static_cast<double>(total);
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);
}

TEST_CASE("all ablation variants produce valid reports; EST/DST shrink the model") {
  Dataset data = toy_dataset(3, 14, 4, 4);
  // 10-window smoke set
  if (data.windows.size() > 10) data.windows.resize(10);
  ModelConfig mcfg = toy_config();
  TrainConfig tcfg;
  tcfg.batch_size = 4;
  tcfg.epochs = 2;
  tcfg.seed = 3;

  Rng rng(86);
  const size_t control_params = param_count(init_weights(mcfg, rng));
  Rng rng2(86);
  const size_t est_params =
      param_count(init_weights(apply_ablation(mcfg, AblationVariant::EST), rng2));
  Rng rng3(86);
  const size_t dst_params =
      param_count(init_weights(apply_ablation(mcfg, AblationVariant::DST), rng3));
  CHECK(est_params < control_params);
  CHECK(dst_params < control_params);

  for (auto v : {AblationVariant::Control, AblationVariant::TP, AblationVariant::EST,
                 AblationVariant::DST}) {
    AblationOutcome out = run_ablation(v, data, data, mcfg, tcfg);
    CHECK(out.report.n_windows == static_cast<int>(data.windows.size()));
    REQUIRE(!out.report.rmse.empty());
    for (double r : out.report.rmse) {
      CHECK(std::isfinite(r));
      CHECK(r >= 0.0);
    }
    CHECK(out.report.rmse.size() == out.report.cv_rmse.size());
  }
}

TEST_CASE("ablation variant names round-trip") {
  for (auto v : {AblationVariant::Control, AblationVariant::TP, AblationVariant::EST,
                 AblationVariant::DST})
    CHECK(ablation_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(ablation_from_string("bogus"), InputError);
}
