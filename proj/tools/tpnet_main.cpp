// tpnet: synthetic data generation, monocular 3D pose recovery, and
// trajectory prediction in one executable. Exit codes: 0 success,
// 1 computation failure, 2 usage or input error.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tpnet/io.hpp"
#include "tpnet/stmha.hpp"

namespace fs = std::filesystem;
using namespace tpnet;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

bool is_preset(const std::string& name) {
  for (const auto& p : preset_names())
    if (p == name) return true;
  return false;
}

Scenario resolve_scenario(const std::string& arg) {
  if (is_preset(arg)) return preset_scenario(arg);
  return scenario_from_json(parse_json_file(arg));
}

// windowing knobs shared by train/eval/ablate
struct WindowArgs {
  double dt = 0.5;
  double radius = 30.0;
  int n_max = 16;
  int stride = 1;
};

void add_window_options(CLI::App* cmd, WindowArgs& w) {
  cmd->add_option("--dt", w.dt,
                  "frame period in seconds when the data dir has no truth.json");
  cmd->add_option("--radius", w.radius, "neighborhood radius in meters");
  cmd->add_option("--n-max", w.n_max, "max vehicles per window");
  cmd->add_option("--stride", w.stride, "frames between window anchors");
}

double data_dir_dt(const std::string& dir, double fallback) {
  const std::string truth = dir + "/truth.json";
  if (fs::exists(truth)) return truth_from_json(parse_json_file(truth)).dt;
  return fallback;
}

std::vector<TrajectoryWindow> windows_from_dir(const std::string& dir,
                                               const ModelConfig& mcfg,
                                               const WindowArgs& wa) {
  const double dt = data_dir_dt(dir, wa.dt);
  const auto rows = read_trajectory_csv(dir + "/trajectory.csv");
  const TrackSet tracks = assemble(rows, dt);
  auto windows = windows_from_tracks(tracks, mcfg.t_steps, mcfg.f_steps,
                                     wa.radius, wa.n_max, wa.stride);
  if (windows.empty())
    throw InputError(dir + ": no usable windows (need tracks covering " +
                     std::to_string(mcfg.t_steps) + "+" +
                     std::to_string(mcfg.f_steps) + " frames)");
  return windows;
}

struct ModelDir {
  ModelConfig config;
  WeightMap weights;
  ScaleSpec scale;
};

ModelDir load_model_dir(const std::string& dir) {
  ModelDir m;
  const auto cfg = parse_json_file(dir + "/config.json");
  m.config = model_config_from_json(
      cfg.contains("model") ? cfg["model"] : cfg);
  m.scale = scale_from_json(parse_json_file(dir + "/scale.json"));
  m.weights = load_weights(dir + "/weights.json");
  Rng shape_rng(0);
  verify_shapes(init_weights(m.config, shape_rng), m.weights);
  return m;
}

// ---- gen --------------------------------------------------------------------

struct GenArgs {
  std::string scenario;
  std::string out;
  std::uint64_t seed = 0;
  double sigma_px = 0.0;
  double sigma_dim = 0.0;
  double sigma_theta = 0.0;
};

void run_gen(const GenArgs& a, const std::string& cmdline) {
  const auto t0 = Clock::now();
  const Scenario sc = resolve_scenario(a.scenario);
  fs::create_directories(a.out);

  const GeneratedData data = generate(sc, a.seed);
  RenderOptions ropt;
  ropt.sigma_px = a.sigma_px;
  const NoiseSpec pose_noise{a.sigma_dim, a.sigma_theta};
  const auto det = make_detections(data, ropt, pose_noise, a.seed);

  std::vector<DetectionRecord> det_rows;
  std::vector<PatchRecord> patch_rows;
  for (const auto& d : det) {
    det_rows.push_back(DetectionRecord{d.frame, d.id, d.box, d.dims, d.theta_local});
    patch_rows.push_back(PatchRecord{d.frame, d.id, d.patch});
  }
  std::vector<Observation> traj;
  for (const auto& ft : data.frames)
    for (const auto& vt : ft.vehicles)
      traj.push_back(Observation{ft.frame, vt.id, vt.ground});

  write_detections_csv(a.out + "/detections.csv", det_rows);
  write_patches_csv(a.out + "/patches.csv", patch_rows);
  write_trajectory_csv(a.out + "/trajectory.csv", traj);
  write_text_file(a.out + "/truth.json", truth_to_json(data).dump(2) + "\n");
  write_text_file(a.out + "/scenario.json", scenario_to_json(sc).dump(2) + "\n");
  CameraSpec cam;
  cam.K = sc.camera;
  cam.width = sc.image_width;
  cam.height = sc.image_height;
  write_text_file(a.out + "/camera.json", camera_to_json(cam).dump(2) + "\n");

  RunManifest m;
  m.command = cmdline;
  m.seed = a.seed;
  m.inputs = {a.scenario};
  if (!is_preset(a.scenario))
    m.config_hashes["scenario"] = file_hash_hex(a.scenario);
  m.outputs = {"detections.csv", "patches.csv", "trajectory.csv", "truth.json",
               "scenario.json", "camera.json"};
  m.timings_ms["total"] = ms_since(t0);
  write_manifest(a.out, m);
  std::printf("gen: %zu frames, %zu detections -> %s\n", data.frames.size(),
              det_rows.size(), a.out.c_str());
}

// ---- solve-pose -------------------------------------------------------------

struct SolveArgs {
  std::string camera;
  std::string detections;
  std::string source = "oracle";
  std::string pose_weights;
  std::string imha_config;
  std::string patches;
  std::string pose_file;
  std::string out;
  std::string trajectory_out;
  bool refine = false;
};

void run_solve(const SolveArgs& a, const std::string& cmdline) {
  const auto t0 = Clock::now();
  const CameraSpec cam = camera_from_json(parse_json_file(a.camera));
  const auto dets = read_detections_csv(a.detections);

  // imha source: weights + patch features
  WeightMap imha_w;
  ImhaConfig icfg;
  std::map<std::pair<int, int>, PatchFeatures> patch_by_key;
  if (a.source == "imha") {
    if (a.pose_weights.empty() || a.patches.empty())
      throw InputError("--pose-source imha requires --pose-weights and --patches");
    if (!a.imha_config.empty()) {
      const auto j = parse_json_file(a.imha_config);
      icfg.d_token = j.value("d_token", icfg.d_token);
      icfg.n_heads = j.value("n_heads", icfg.n_heads);
      icfg.n_layers = j.value("n_layers", icfg.n_layers);
      icfg.d_ff = j.value("d_ff", icfg.d_ff);
    }
    imha_w = load_weights(a.pose_weights);
    Rng shape_rng(0);
    verify_shapes(imha_init(icfg, shape_rng), imha_w);
    for (const auto& p : read_patches_csv(a.patches))
      patch_by_key[{p.frame, p.id}] = p.patch;
  }
  // file source: external pose estimates in detections-CSV format
  std::map<std::pair<int, int>, DetectionRecord> pose_by_key;
  if (a.source == "file") {
    if (a.pose_file.empty())
      throw InputError("--pose-source file requires --pose-file");
    for (const auto& r : read_detections_csv(a.pose_file))
      pose_by_key[{r.frame, r.id}] = r;
  }

  std::vector<SolvedPoseRecord> rows;
  std::vector<Observation> traj;
  int flagged = 0;
  for (const auto& d : dets) {
    SolvedPoseRecord r;
    r.frame = d.frame;
    r.id = d.id;
    r.ok = false;
    r.config_index = -1;
    r.residual_px = std::nan("");
    try {
      d.box.validate();
      if (d.box.x_min <= 0.0 || d.box.y_min <= 0.0 ||
          d.box.x_max >= cam.width || d.box.y_max >= cam.height)
        throw GeometryError("2D box truncated at the image edge");
      Vec3 dims = d.dims;
      double theta_local = d.theta_local;
      if (a.source == "imha") {
        auto it = patch_by_key.find({d.frame, d.id});
        if (it == patch_by_key.end())
          throw GeometryError("no patch features for this detection");
        const PoseEstimate est = imha_regress(it->second, imha_w, icfg);
        dims = est.dims;
        theta_local = est.theta_local;
      } else if (a.source == "file") {
        auto it = pose_by_key.find({d.frame, d.id});
        if (it == pose_by_key.end())
          throw GeometryError("no external pose estimate for this detection");
        dims = it->second.dims;
        theta_local = it->second.theta_local;
      }
      const double u_center = (d.box.x_min + d.box.x_max) / 2.0;
      const double yaw = wrap_angle(theta_local + ray_angle(cam.K, u_center));
      const RecoveredBox rec = recover_box3d(cam.K, yaw, dims, d.box, a.refine);
      r.ok = true;
      r.translation = rec.box.translation;
      r.config_index = rec.config_index;
      r.residual_px = rec.residual_px;
      traj.push_back(Observation{
          d.frame, d.id, Pos2(rec.box.translation.x(), rec.box.translation.z())});
    } catch (const GeometryError&) {
      ++flagged;
    } catch (const ContractError&) {
      ++flagged;
    }
    rows.push_back(r);
  }
  const fs::path parent = fs::path(a.out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_solved_csv(a.out, rows);
  if (!a.trajectory_out.empty()) {
    const fs::path tparent = fs::path(a.trajectory_out).parent_path();
    if (!tparent.empty()) fs::create_directories(tparent);
    write_trajectory_csv(a.trajectory_out, traj);
  }

  RunManifest m;
  m.command = cmdline;
  m.config_hashes["camera"] = file_hash_hex(a.camera);
  m.config_hashes["detections"] = file_hash_hex(a.detections);
  m.inputs = {a.camera, a.detections};
  m.outputs = {a.out};
  if (!a.trajectory_out.empty()) m.outputs.push_back(a.trajectory_out);
  m.timings_ms["total"] = ms_since(t0);
  write_manifest(parent.empty() ? "." : parent.string(), m);
  std::printf("solve-pose: %zu detections, %d flagged -> %s\n", dets.size(),
              flagged, a.out.c_str());
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  WindowArgs window;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool checkpoints = false;
};

void run_train(const TrainArgs& a, const std::string& cmdline) {
  const auto t0 = Clock::now();
  nlohmann::json cfg = nlohmann::json::object();
  if (!a.config.empty()) cfg = parse_json_file(a.config);
  ModelConfig mcfg = model_config_from_json(cfg.value("model", nlohmann::json::object()));
  TrainConfig tcfg = train_config_from_json(cfg.value("train", nlohmann::json::object()));
  if (a.seed_given) tcfg.seed = a.seed;
  fs::create_directories(a.out);
  if (a.checkpoints) {
    tcfg.checkpoint_dir = a.out + "/checkpoints";
    fs::create_directories(tcfg.checkpoint_dir);
  }

  Dataset ds;
  ds.windows = windows_from_dir(a.data, mcfg, a.window);
  ds.scale = fit_scale(ds.windows);
  const auto t_data = ms_since(t0);

  const TrainResult res = train(ds, mcfg, tcfg);

  save_weights(res.weights, a.out + "/weights.json");
  write_loss_csv(a.out + "/loss.csv", res.loss_curve);
  nlohmann::json out_cfg;
  out_cfg["model"] = model_config_to_json(mcfg);
  out_cfg["train"] = train_config_to_json(tcfg);
  write_text_file(a.out + "/config.json", out_cfg.dump(2) + "\n");
  write_text_file(a.out + "/scale.json", scale_to_json(ds.scale).dump(2) + "\n");

  RunManifest m;
  m.command = cmdline;
  if (!a.config.empty()) m.config_hashes["config"] = file_hash_hex(a.config);
  m.config_hashes["trajectory"] = file_hash_hex(a.data + "/trajectory.csv");
  m.seed = tcfg.seed;
  m.inputs = {a.data};
  m.outputs = {"weights.json", "loss.csv", "config.json", "scale.json"};
  m.timings_ms["data"] = t_data;
  m.timings_ms["total"] = ms_since(t0);
  write_manifest(a.out, m);
  std::printf("train: %zu windows, %d epochs, final loss %.6f -> %s\n",
              ds.windows.size(), tcfg.epochs,
              res.loss_curve.empty() ? 0.0 : res.loss_curve.back(), a.out.c_str());
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out;
  WindowArgs window;
};

// Geometry-stage metric: recover every visible detection with oracle pose
// inputs and bin MDE/IoU by ground distance.
std::vector<DistanceBin> geometry_bins(const std::string& data_dir) {
  const std::string det_path = data_dir + "/detections.csv";
  const std::string truth_path = data_dir + "/truth.json";
  if (!fs::exists(det_path) || !fs::exists(truth_path)) return {};
  const TruthData truth = truth_from_json(parse_json_file(truth_path));
  std::map<std::pair<int, int>, Box3D> truth_by_key;
  for (const auto& ft : truth.frames)
    for (const auto& vt : ft.vehicles)
      truth_by_key[{ft.frame, vt.id}] = vt.cam_box;
  std::vector<Box3D> est, tru;
  for (const auto& d : read_detections_csv(det_path)) {
    auto it = truth_by_key.find({d.frame, d.id});
    if (it == truth_by_key.end()) continue;
    try {
      const double u_center = (d.box.x_min + d.box.x_max) / 2.0;
      const double yaw = wrap_angle(d.theta_local + ray_angle(truth.camera.K, u_center));
      const RecoveredBox rec = recover_box3d(truth.camera.K, yaw, d.dims, d.box);
      est.push_back(rec.box);
      tru.push_back(it->second);
    } catch (const GeometryError&) {
      continue;  // unsolvable detection; metric covers the solvable set
    }
  }
  if (est.empty()) return {};
  return mde_iou_vs_distance(est, tru);
}

void run_eval(const EvalArgs& a, const std::string& cmdline) {
  const auto t0 = Clock::now();
  const ModelDir model = load_model_dir(a.model);
  Dataset ds;
  ds.windows = windows_from_dir(a.data, model.config, a.window);
  ds.scale = model.scale;

  EvalReport rep = evaluate(ds, model.weights, model.config);
  rep.mde_iou = geometry_bins(a.data);

  fs::create_directories(a.out);
  write_text_file(a.out + "/eval_report.json", eval_report_to_json(rep).dump(2) + "\n");
  write_eval_csvs(a.out, rep);

  RunManifest m;
  m.command = cmdline;
  m.config_hashes["weights"] = file_hash_hex(a.model + "/weights.json");
  m.config_hashes["trajectory"] = file_hash_hex(a.data + "/trajectory.csv");
  m.inputs = {a.model, a.data};
  m.outputs = {"eval_report.json", "rmse.csv", "mde_iou.csv"};
  m.timings_ms["total"] = ms_since(t0);
  write_manifest(a.out, m);

  std::printf("eval: %d windows\nhorizon_s  rmse_m  cv_rmse_m\n", rep.n_windows);
  for (size_t i = 0; i < rep.horizon_seconds.size(); ++i)
    std::printf("%8.1f  %6.3f  %6.3f\n", rep.horizon_seconds[i], rep.rmse[i],
                rep.cv_rmse[i]);
}

// ---- predict ----------------------------------------------------------------

struct PredictArgs {
  std::string model;
  std::string window;
  std::string out;
};

TrajectoryWindow window_from_json(const nlohmann::json& j, const ModelConfig& cfg) {
  TrajectoryWindow w;
  w.window_id = j.value("window_id", 0);
  w.dt = j.value("dt", 0.5);
  w.t_steps = cfg.t_steps;
  w.f_steps = cfg.f_steps;
  w.anchor_frame = cfg.t_steps - 1;
  if (!j.contains("vehicles") || !j["vehicles"].is_array() || j["vehicles"].empty())
    throw InputError("window JSON: missing non-empty 'vehicles' array");
  const int n = static_cast<int>(j["vehicles"].size());
  w.past.assign(static_cast<size_t>(cfg.t_steps),
                std::vector<Pos2>(static_cast<size_t>(n), Pos2::Zero()));
  w.future.assign(static_cast<size_t>(cfg.f_steps),
                  std::vector<Pos2>(static_cast<size_t>(n), Pos2::Zero()));
  w.present.assign(static_cast<size_t>(cfg.t_steps + cfg.f_steps),
                   std::vector<uint8_t>(static_cast<size_t>(n), 0));
  for (int v = 0; v < n; ++v) {
    const auto& vj = j["vehicles"][static_cast<size_t>(v)];
    if (!vj.contains("id")) throw InputError("window JSON: vehicle missing 'id'");
    w.vehicle_ids.push_back(vj["id"].get<int>());
    const auto& past = vj.at("past");
    if (!past.is_array() || static_cast<int>(past.size()) != cfg.t_steps)
      throw InputError("window JSON: vehicle " + std::to_string(w.vehicle_ids.back()) +
                       ": 'past' must list " + std::to_string(cfg.t_steps) +
                       " entries ([x, y] or null)");
    for (int t = 0; t < cfg.t_steps; ++t) {
      const auto& e = past[static_cast<size_t>(t)];
      if (e.is_null()) continue;
      w.past[static_cast<size_t>(t)][static_cast<size_t>(v)] =
          Pos2(e.at(0).get<double>(), e.at(1).get<double>());
      w.present[static_cast<size_t>(t)][static_cast<size_t>(v)] = 1;
    }
    if (!w.present[static_cast<size_t>(cfg.t_steps - 1)][static_cast<size_t>(v)])
      throw InputError("window JSON: vehicle " + std::to_string(w.vehicle_ids.back()) +
                       " must be present at the final past step");
  }
  for (int t = 0; t < cfg.t_steps; ++t)
    if (!w.present[static_cast<size_t>(t)][0])
      throw InputError("window JSON: the first (target) vehicle needs a full past");
  // window positions are target-anchored; inputs arrive absolute
  w.origin = w.past[static_cast<size_t>(cfg.t_steps - 1)][0];
  for (int t = 0; t < cfg.t_steps; ++t)
    for (int v = 0; v < n; ++v)
      if (w.present[static_cast<size_t>(t)][static_cast<size_t>(v)])
        w.past[static_cast<size_t>(t)][static_cast<size_t>(v)] -= w.origin;
  return w;
}

void run_predict(const PredictArgs& a, const std::string& cmdline) {
  const auto t0 = Clock::now();
  const ModelDir model = load_model_dir(a.model);
  const TrajectoryWindow w = window_from_json(parse_json_file(a.window), model.config);
  const auto positions = predict_window(w, model.scale, model.weights, model.config);

  std::vector<PredictionRecord> rows;
  for (size_t s = 0; s < positions.size(); ++s)
    for (size_t v = 0; v < positions[s].size(); ++v)
      rows.push_back(PredictionRecord{w.window_id, w.vehicle_ids[v],
                                      static_cast<int>(s),
                                      Pos2(positions[s][v] + w.origin)});
  const fs::path parent = fs::path(a.out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_predictions_csv(a.out, rows);

  RunManifest m;
  m.command = cmdline;
  m.config_hashes["window"] = file_hash_hex(a.window);
  m.config_hashes["weights"] = file_hash_hex(a.model + "/weights.json");
  m.inputs = {a.model, a.window};
  m.outputs = {a.out};
  m.timings_ms["total"] = ms_since(t0);
  write_manifest(parent.empty() ? "." : parent.string(), m);
  std::printf("predict: %d vehicles x %d steps -> %s\n", w.num_vehicles(),
              w.f_steps, a.out.c_str());
}

// ---- ablate -----------------------------------------------------------------

struct AblateArgs {
  std::string data;
  std::string gt_data;
  std::string config;
  std::string out;
  std::string variant = "all";
  WindowArgs window;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

std::pair<Dataset, Dataset> split_dataset(std::vector<TrajectoryWindow> windows,
                                          std::uint64_t seed) {
  Rng rng(seed);
  for (size_t i = windows.size(); i > 1; --i) {
    const size_t j =
        static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(windows[i - 1], windows[j]);
  }
  const size_t n_eval = std::max<size_t>(1, windows.size() / 5);
  Dataset train_ds, eval_ds;
  eval_ds.windows.assign(windows.begin(), windows.begin() + static_cast<long>(n_eval));
  train_ds.windows.assign(windows.begin() + static_cast<long>(n_eval), windows.end());
  if (train_ds.windows.empty())
    throw InputError("ablate: not enough windows to split into train/eval");
  train_ds.scale = fit_scale(train_ds.windows);
  eval_ds.scale = train_ds.scale;
  return {train_ds, eval_ds};
}

void run_ablate(const AblateArgs& a, const std::string& cmdline) {
  const auto t0 = Clock::now();
  nlohmann::json cfg = nlohmann::json::object();
  if (!a.config.empty()) cfg = parse_json_file(a.config);
  const ModelConfig mcfg =
      model_config_from_json(cfg.value("model", nlohmann::json::object()));
  TrainConfig tcfg =
      train_config_from_json(cfg.value("train", nlohmann::json::object()));
  if (a.seed_given) tcfg.seed = a.seed;

  const auto noisy = split_dataset(windows_from_dir(a.data, mcfg, a.window),
                                   tcfg.seed ^ 0x5917);
  const auto gt = split_dataset(windows_from_dir(a.gt_data, mcfg, a.window),
                                tcfg.seed ^ 0x5917);

  std::vector<AblationVariant> variants;
  if (a.variant == "all")
    variants = {AblationVariant::TP, AblationVariant::EST, AblationVariant::DST,
                AblationVariant::Control};
  else
    variants = {ablation_from_string(a.variant)};

  fs::create_directories(a.out);
  nlohmann::json report = nlohmann::json::array();
  std::string table = "variant";
  const int horizon_count =
      static_cast<int>(std::floor(mcfg.f_steps * data_dir_dt(a.gt_data, a.window.dt)));
  for (int hsec = 1; hsec <= horizon_count; ++hsec)
    table += ",rmse@" + std::to_string(hsec) + "s";
  table += "\n";
  for (const AblationVariant v : variants) {
    const bool use_gt = v == AblationVariant::TP;
    const Dataset& train_ds = use_gt ? gt.first : noisy.first;
    const Dataset& eval_ds = use_gt ? gt.second : noisy.second;
    const AblationOutcome outcome = run_ablation(v, train_ds, eval_ds, mcfg, tcfg);
    nlohmann::json entry;
    entry["variant"] = to_string(v);
    entry["report"] = eval_report_to_json(outcome.report);
    entry["final_loss"] = outcome.trained.loss_curve.empty()
                              ? 0.0
                              : outcome.trained.loss_curve.back();
    report.push_back(std::move(entry));
    table += to_string(v);
    for (double r : outcome.report.rmse) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.4f", r);
      table += buf;
    }
    table += "\n";
    std::printf("ablate: %s done\n", to_string(v).c_str());
  }
  write_text_file(a.out + "/ablation.csv", table);
  write_text_file(a.out + "/ablation.json", report.dump(2) + "\n");

  RunManifest m;
  m.command = cmdline;
  if (!a.config.empty()) m.config_hashes["config"] = file_hash_hex(a.config);
  m.seed = tcfg.seed;
  m.inputs = {a.data, a.gt_data};
  m.outputs = {"ablation.csv", "ablation.json"};
  m.timings_ms["total"] = ms_since(t0);
  write_manifest(a.out, m);
  std::fputs(table.c_str(), stdout);
}

// ---- train-imha -------------------------------------------------------------

struct TrainImhaArgs {
  std::string data;
  std::string out;
  int epochs = 60;
  double lr = 3e-3;
  std::uint64_t seed = 2024;
};

void run_train_imha(const TrainImhaArgs& a, const std::string& cmdline) {
  const auto t0 = Clock::now();
  const auto dets = read_detections_csv(a.data + "/detections.csv");
  std::map<std::pair<int, int>, PatchFeatures> patch_by_key;
  for (const auto& p : read_patches_csv(a.data + "/patches.csv"))
    patch_by_key[{p.frame, p.id}] = p.patch;

  std::vector<PatchSample> samples;
  for (const auto& d : dets) {
    auto it = patch_by_key.find({d.frame, d.id});
    if (it == patch_by_key.end()) continue;
    samples.push_back(PatchSample{it->second, d.dims, d.theta_local});
  }
  if (samples.empty())
    throw InputError(a.data + ": no detections with patch features");

  ImhaConfig icfg;
  const ImhaTrainResult res = imha_train(samples, icfg, a.epochs, a.lr, a.seed);

  fs::create_directories(a.out);
  save_weights(res.weights, a.out + "/weights.json");
  write_loss_csv(a.out + "/loss.csv", res.loss_curve);
  nlohmann::json jc{{"d_token", icfg.d_token},
                    {"n_heads", icfg.n_heads},
                    {"n_layers", icfg.n_layers},
                    {"d_ff", icfg.d_ff}};
  write_text_file(a.out + "/imha_config.json", jc.dump(2) + "\n");

  RunManifest m;
  m.command = cmdline;
  m.config_hashes["detections"] = file_hash_hex(a.data + "/detections.csv");
  m.seed = a.seed;
  m.inputs = {a.data};
  m.outputs = {"weights.json", "loss.csv", "imha_config.json"};
  m.timings_ms["total"] = ms_since(t0);
  write_manifest(a.out, m);
  std::printf("train-imha: %zu samples, final loss %.6f -> %s\n", samples.size(),
              res.loss_curve.back(), a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tpnet: vehicle trajectory prediction pipeline"};
  app.require_subcommand(1);
  const std::string cmdline = join_args(argc, argv);

  GenArgs gen;
  auto* cg = app.add_subcommand(
      "gen", "Generate a synthetic dataset: detections.csv "
             "(frame,track_id,xmin,ymin,xmax,ymax,dx,dy,dz,theta_local), "
             "patches.csv (frame,track_id,p0..p255,aspect,area_frac,"
             "center_offset), trajectory.csv (frame,track_id,x,y), truth.json");
  cg->add_option("--scenario", gen.scenario,
                 "scenario JSON path or preset (platoon-3, platoon-8, cut-in, "
                 "lane-change, merge, sparse)")
      ->required();
  cg->add_option("--seed", gen.seed, "RNG seed for jitter and noise");
  cg->add_option("--out", gen.out, "output directory")->required();
  cg->add_option("--sigma-px", gen.sigma_px, "Gaussian 2D box noise, pixels");
  cg->add_option("--sigma-dim", gen.sigma_dim, "Gaussian dimension noise, meters");
  cg->add_option("--sigma-theta", gen.sigma_theta,
                 "Gaussian orientation noise, radians");
  cg->callback([&] { run_gen(gen, cmdline); });

  SolveArgs solve;
  auto* cs = app.add_subcommand(
      "solve-pose", "Recover 3D positions from 2D detections. Output columns: "
                    "frame,track_id,ok,tx,ty,tz,config,residual_px "
                    "(ok=0 rows are unsolvable and left flagged)");
  cs->add_option("--camera", solve.camera, "camera JSON {fx,fy,cx,cy[,width,height]}")
      ->required();
  cs->add_option("--detections", solve.detections, "detections CSV")->required();
  cs->add_option("--pose-source", solve.source, "oracle|imha|file")
      ->check(CLI::IsMember({"oracle", "imha", "file"}));
  cs->add_option("--pose-weights", solve.pose_weights, "IMHA weights JSON");
  cs->add_option("--imha-config", solve.imha_config, "IMHA architecture JSON");
  cs->add_option("--patches", solve.patches, "patch features CSV (imha source)");
  cs->add_option("--pose-file", solve.pose_file,
                 "external pose estimates CSV, detections format (file source)");
  cs->add_option("--out", solve.out, "output CSV path")->required();
  cs->add_option("--trajectory-out", solve.trajectory_out,
                 "also write recovered ground positions (frame,track_id,x,y)");
  cs->add_flag("--refine", solve.refine, "Gauss-Newton refinement after LSQ");
  cs->callback([&] { run_solve(solve, cmdline); });

  TrainArgs train_args;
  auto* ct = app.add_subcommand(
      "train", "Train the STMHA predictor on trajectory.csv; writes "
               "weights.json, loss.csv (epoch,loss), config.json, scale.json");
  ct->add_option("--data", train_args.data, "dataset directory")->required();
  ct->add_option("--config", train_args.config,
                 "JSON {\"model\": {...}, \"train\": {...}}");
  ct->add_option("--out", train_args.out, "output directory")->required();
  ct->add_option("--seed", train_args.seed, "overrides train.seed")
      ->each([&](const std::string&) { train_args.seed_given = true; });
  ct->add_flag("--checkpoints", train_args.checkpoints, "per-epoch weight dumps");
  add_window_options(ct, train_args.window);
  ct->callback([&] { run_train(train_args, cmdline); });

  EvalArgs eval_args;
  auto* ce = app.add_subcommand(
      "eval", "Evaluate a trained model: eval_report.json, rmse.csv "
              "(horizon_s,rmse,cv_rmse), mde_iou.csv (bin_lo,bin_hi,count,mde,iou)");
  ce->add_option("--model", eval_args.model, "model directory from train")->required();
  ce->add_option("--data", eval_args.data, "dataset directory")->required();
  ce->add_option("--out", eval_args.out, "output directory")->required();
  add_window_options(ce, eval_args.window);
  ce->callback([&] { run_eval(eval_args, cmdline); });

  PredictArgs pred;
  auto* cp = app.add_subcommand(
      "predict", "Predict one window. Window JSON: {window_id, dt, vehicles: "
                 "[{id, past: [[x,y]|null x t_steps]}]}; output columns "
                 "window_id,track_id,step,x,y");
  cp->add_option("--model", pred.model, "model directory")->required();
  cp->add_option("--window", pred.window, "window JSON path")->required();
  cp->add_option("--out", pred.out, "output CSV path")->required();
  cp->callback([&] { run_predict(pred, cmdline); });

  AblateArgs ablate;
  auto* ca = app.add_subcommand(
      "ablate", "Train and evaluate ablation variants (tp, est, dst, control) "
                "at equal seed; writes ablation.csv (variant,rmse@1s..)");
  ca->add_option("--data", ablate.data, "recovered-geometry dataset dir")->required();
  ca->add_option("--gt-data", ablate.gt_data, "ground-truth dataset dir")->required();
  ca->add_option("--config", ablate.config, "JSON {\"model\", \"train\"}");
  ca->add_option("--out", ablate.out, "output directory")->required();
  ca->add_option("--variant", ablate.variant, "all|tp|est|dst|control")
      ->check(CLI::IsMember({"all", "tp", "est", "dst", "control"}));
  ca->add_option("--seed", ablate.seed, "overrides train.seed")
      ->each([&](const std::string&) { ablate.seed_given = true; });
  add_window_options(ca, ablate.window);
  ca->callback([&] { run_ablate(ablate, cmdline); });

  TrainImhaArgs ti;
  auto* ci = app.add_subcommand(
      "train-imha", "Train the IMHA pose regressor on a gen output directory "
                    "(detections.csv + patches.csv)");
  ci->add_option("--data", ti.data, "gen output directory")->required();
  ci->add_option("--out", ti.out, "output directory")->required();
  ci->add_option("--epochs", ti.epochs, "training epochs");
  ci->add_option("--lr", ti.lr, "Adam learning rate");
  ci->add_option("--seed", ti.seed, "RNG seed");
  ci->callback([&] { run_train_imha(ti, cmdline); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "tpnet: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "tpnet: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tpnet: %s\n", e.what());
    return 1;
  }
  return 0;
}
