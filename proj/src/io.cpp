#include "tpnet/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tpnet {

using nlohmann::json;

namespace {

// shortest decimal form that parses back to the same double
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& path, int line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(path + ":" + std::to_string(line_no) +
                     ": expected a number, got '" + s + "'");
  }
}

int to_int(const std::string& s, const std::string& path, int line_no) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(path + ":" + std::to_string(line_no) +
                     ": expected an integer, got '" + s + "'");
  }
}

// Reads a CSV, checks the header, and hands each data row (split into
// fields, count-validated) to the callback.
template <typename Fn>
void read_csv(const std::string& path, const std::string& header,
              size_t n_columns, Fn&& on_row) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ": empty file");
  if (line != header)
    throw InputError(path + ": unexpected header '" + line + "', want '" +
                     header + "'");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != n_columns)
      throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(n_columns) + " columns, got " +
                       std::to_string(fields.size()));
    on_row(fields, line_no);
  }
}

json vec2_json(const Pos2& p) { return json::array({p.x(), p.y()}); }
json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Pos2 json_vec2(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2)
    throw InputError(what + ": expected [x, y]");
  return Pos2(j[0].get<double>(), j[1].get<double>());
}

Vec3 json_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3)
    throw InputError(what + ": expected [x, y, z]");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << content;
}

json parse_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    int line = 1, col = 1;
    const size_t stop = std::min(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw InputError(path + ": JSON parse error at line " + std::to_string(line) +
                     ", column " + std::to_string(col) + ": " + e.what());
  }
}

std::string file_hash_hex(const std::string& path) {
  const std::string text = read_text_file(path);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- camera -----------------------------------------------------------------

CameraSpec camera_from_json(const json& j) {
  for (const char* key : {"fx", "fy", "cx", "cy"})
    if (!j.contains(key))
      throw InputError(std::string("camera JSON: missing field '") + key + "'");
  CameraSpec c;
  c.K.fx = j["fx"].get<double>();
  c.K.fy = j["fy"].get<double>();
  c.K.cx = j["cx"].get<double>();
  c.K.cy = j["cy"].get<double>();
  c.width = j.value("width", 1920);
  c.height = j.value("height", 1080);
  if (c.K.fx <= 0.0 || c.K.fy <= 0.0)
    throw InputError("camera JSON: focal lengths must be positive");
  if (c.width <= 0 || c.height <= 0)
    throw InputError("camera JSON: image size must be positive");
  return c;
}

json camera_to_json(const CameraSpec& c) {
  return json{{"fx", c.K.fx},      {"fy", c.K.fy},        {"cx", c.K.cx},
              {"cy", c.K.cy},      {"width", c.width},    {"height", c.height}};
}

// ---- scenario ---------------------------------------------------------------

Scenario scenario_from_json(const json& j) {
  Scenario s;
  s.name = j.value("name", std::string("custom"));
  s.duration_s = j.value("duration_s", s.duration_s);
  s.dt = j.value("dt", s.dt);
  if (j.contains("camera")) {
    const CameraSpec c = camera_from_json(j["camera"]);
    s.camera = c.K;
    s.image_width = c.width;
    s.image_height = c.height;
  }
  s.camera_height = j.value("camera_height", s.camera_height);
  s.jitter_pos = j.value("jitter_pos", s.jitter_pos);
  s.jitter_vel = j.value("jitter_vel", s.jitter_vel);
  s.jitter_vel_common = j.value("jitter_vel_common", s.jitter_vel_common);
  s.min_gap = j.value("min_gap", s.min_gap);
  if (!j.contains("vehicles") || !j["vehicles"].is_array())
    throw InputError("scenario JSON: missing 'vehicles' array");
  for (const auto& vj : j["vehicles"]) {
    VehicleSpec v;
    if (!vj.contains("id")) throw InputError("scenario JSON: vehicle missing 'id'");
    v.id = vj["id"].get<int>();
    if (vj.contains("dims")) v.dims = json_vec3(vj["dims"], "vehicle dims");
    if (vj.contains("pos0")) v.script.pos0 = json_vec2(vj["pos0"], "vehicle pos0");
    if (vj.contains("vel0")) v.script.vel0 = json_vec2(vj["vel0"], "vehicle vel0");
    if (vj.contains("accel")) v.script.accel = json_vec2(vj["accel"], "vehicle accel");
    if (vj.contains("lane_change")) {
      const auto& lj = vj["lane_change"];
      LaneChange lc;
      lc.start_s = lj.value("start_s", 0.0);
      lc.duration_s = lj.value("duration_s", 1.0);
      lc.offset_m = lj.value("offset_m", 0.0);
      v.script.lane_change = lc;
    }
    s.vehicles.push_back(std::move(v));
  }
  s.validate();
  return s;
}

json scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["duration_s"] = s.duration_s;
  j["dt"] = s.dt;
  CameraSpec c;
  c.K = s.camera;
  c.width = s.image_width;
  c.height = s.image_height;
  j["camera"] = camera_to_json(c);
  j["camera_height"] = s.camera_height;
  j["jitter_pos"] = s.jitter_pos;
  j["jitter_vel"] = s.jitter_vel;
  j["jitter_vel_common"] = s.jitter_vel_common;
  j["min_gap"] = s.min_gap;
  json vehicles = json::array();
  for (const auto& v : s.vehicles) {
    json vj;
    vj["id"] = v.id;
    vj["dims"] = vec3_json(v.dims);
    vj["pos0"] = vec2_json(v.script.pos0);
    vj["vel0"] = vec2_json(v.script.vel0);
    vj["accel"] = vec2_json(v.script.accel);
    if (v.script.lane_change) {
      vj["lane_change"] = json{{"start_s", v.script.lane_change->start_s},
                               {"duration_s", v.script.lane_change->duration_s},
                               {"offset_m", v.script.lane_change->offset_m}};
    }
    vehicles.push_back(std::move(vj));
  }
  j["vehicles"] = std::move(vehicles);
  return j;
}

// ---- configs ----------------------------------------------------------------

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.stack_depth = j.value("stack_depth", c.stack_depth);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
  c.t_steps = j.value("t_steps", c.t_steps);
  c.f_steps = j.value("f_steps", c.f_steps);
  c.d_near = j.value("d_near", c.d_near);
  c.literal_attention_scaling =
      j.value("literal_attention_scaling", c.literal_attention_scaling);
  c.no_encoder_stmha = j.value("no_encoder_stmha", c.no_encoder_stmha);
  c.no_decoder_stmha = j.value("no_decoder_stmha", c.no_decoder_stmha);
  c.validate();
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"stack_depth", c.stack_depth},
              {"d_ff", c.d_ff},
              {"lstm_hidden", c.lstm_hidden},
              {"t_steps", c.t_steps},
              {"f_steps", c.f_steps},
              {"d_near", c.d_near},
              {"literal_attention_scaling", c.literal_attention_scaling},
              {"no_encoder_stmha", c.no_encoder_stmha},
              {"no_decoder_stmha", c.no_decoder_stmha}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.tf_ratio = j.value("tf_ratio", c.tf_ratio);
  c.cosine_lr = j.value("cosine_lr", c.cosine_lr);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  c.validate();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"tf_ratio", c.tf_ratio},
              {"cosine_lr", c.cosine_lr},
              {"seed", c.seed},
              {"checkpoint_dir", c.checkpoint_dir}};
}

ScaleSpec scale_from_json(const json& j) {
  ScaleSpec s;
  s.offset_x = j.value("offset_x", 0.0);
  s.gain_x = j.value("gain_x", 1.0);
  s.offset_y = j.value("offset_y", 0.0);
  s.gain_y = j.value("gain_y", 1.0);
  return s;
}

json scale_to_json(const ScaleSpec& s) {
  return json{{"offset_x", s.offset_x},
              {"gain_x", s.gain_x},
              {"offset_y", s.offset_y},
              {"gain_y", s.gain_y}};
}

// ---- CSV files --------------------------------------------------------------

static const char* kDetectionsHeader =
    "frame,track_id,xmin,ymin,xmax,ymax,dx,dy,dz,theta_local";

void write_detections_csv(const std::string& path,
                          const std::vector<DetectionRecord>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << kDetectionsHeader << "\n";
  for (const auto& r : rows) {
    out << r.frame << ',' << r.id << ',' << fmt(r.box.x_min) << ','
        << fmt(r.box.y_min) << ',' << fmt(r.box.x_max) << ',' << fmt(r.box.y_max)
        << ',' << fmt(r.dims.x()) << ',' << fmt(r.dims.y()) << ','
        << fmt(r.dims.z()) << ',' << fmt(r.theta_local) << "\n";
  }
}

std::vector<DetectionRecord> read_detections_csv(const std::string& path) {
  std::vector<DetectionRecord> rows;
  read_csv(path, kDetectionsHeader, 10,
           [&](const std::vector<std::string>& f, int ln) {
             DetectionRecord r;
             r.frame = to_int(f[0], path, ln);
             r.id = to_int(f[1], path, ln);
             r.box = Box2D{to_double(f[2], path, ln), to_double(f[3], path, ln),
                           to_double(f[4], path, ln), to_double(f[5], path, ln)};
             r.dims = Vec3(to_double(f[6], path, ln), to_double(f[7], path, ln),
                           to_double(f[8], path, ln));
             r.theta_local = to_double(f[9], path, ln);
             rows.push_back(r);
           });
  return rows;
}

static std::string patches_header() {
  std::string h = "frame,track_id";
  for (int i = 0; i < 256; ++i) h += ",p" + std::to_string(i);
  h += ",aspect,area_frac,center_offset";
  return h;
}

void write_patches_csv(const std::string& path, const std::vector<PatchRecord>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << patches_header() << "\n";
  for (const auto& r : rows) {
    out << r.frame << ',' << r.id;
    for (double p : r.patch.pixels) out << ',' << fmt(p);
    out << ',' << fmt(r.patch.aspect) << ',' << fmt(r.patch.area_frac) << ','
        << fmt(r.patch.center_offset) << "\n";
  }
}

std::vector<PatchRecord> read_patches_csv(const std::string& path) {
  std::vector<PatchRecord> rows;
  read_csv(path, patches_header(), 261,
           [&](const std::vector<std::string>& f, int ln) {
             PatchRecord r;
             r.frame = to_int(f[0], path, ln);
             r.id = to_int(f[1], path, ln);
             for (int i = 0; i < 256; ++i)
               r.patch.pixels[static_cast<size_t>(i)] =
                   to_double(f[static_cast<size_t>(i) + 2], path, ln);
             r.patch.aspect = to_double(f[258], path, ln);
             r.patch.area_frac = to_double(f[259], path, ln);
             r.patch.center_offset = to_double(f[260], path, ln);
             rows.push_back(std::move(r));
           });
  return rows;
}

void write_trajectory_csv(const std::string& path,
                          const std::vector<Observation>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << "frame,track_id,x,y\n";
  for (const auto& r : rows)
    out << r.frame << ',' << r.id << ',' << fmt(r.pos.x()) << ','
        << fmt(r.pos.y()) << "\n";
}

std::vector<Observation> read_trajectory_csv(const std::string& path) {
  std::vector<Observation> rows;
  read_csv(path, "frame,track_id,x,y", 4,
           [&](const std::vector<std::string>& f, int ln) {
             Observation o;
             o.frame = to_int(f[0], path, ln);
             o.id = to_int(f[1], path, ln);
             o.pos = Pos2(to_double(f[2], path, ln), to_double(f[3], path, ln));
             rows.push_back(o);
           });
  return rows;
}

static const char* kSolvedHeader = "frame,track_id,ok,tx,ty,tz,config,residual_px";

void write_solved_csv(const std::string& path,
                      const std::vector<SolvedPoseRecord>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << kSolvedHeader << "\n";
  for (const auto& r : rows) {
    out << r.frame << ',' << r.id << ',' << (r.ok ? 1 : 0) << ','
        << fmt(r.translation.x()) << ',' << fmt(r.translation.y()) << ','
        << fmt(r.translation.z()) << ',' << r.config_index << ','
        << fmt(r.residual_px) << "\n";
  }
}

std::vector<SolvedPoseRecord> read_solved_csv(const std::string& path) {
  std::vector<SolvedPoseRecord> rows;
  read_csv(path, kSolvedHeader, 8, [&](const std::vector<std::string>& f, int ln) {
    SolvedPoseRecord r;
    r.frame = to_int(f[0], path, ln);
    r.id = to_int(f[1], path, ln);
    r.ok = to_int(f[2], path, ln) != 0;
    r.translation = Vec3(to_double(f[3], path, ln), to_double(f[4], path, ln),
                         to_double(f[5], path, ln));
    r.config_index = to_int(f[6], path, ln);
    r.residual_px = to_double(f[7], path, ln);
    rows.push_back(r);
  });
  return rows;
}

void write_predictions_csv(const std::string& path,
                           const std::vector<PredictionRecord>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << "window_id,track_id,step,x,y\n";
  for (const auto& r : rows)
    out << r.window_id << ',' << r.id << ',' << r.step << ',' << fmt(r.pos.x())
        << ',' << fmt(r.pos.y()) << "\n";
}

std::vector<PredictionRecord> read_predictions_csv(const std::string& path) {
  std::vector<PredictionRecord> rows;
  read_csv(path, "window_id,track_id,step,x,y", 5,
           [&](const std::vector<std::string>& f, int ln) {
             PredictionRecord r;
             r.window_id = to_int(f[0], path, ln);
             r.id = to_int(f[1], path, ln);
             r.step = to_int(f[2], path, ln);
             r.pos = Pos2(to_double(f[3], path, ln), to_double(f[4], path, ln));
             rows.push_back(r);
           });
  return rows;
}

void write_loss_csv(const std::string& path, const std::vector<double>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << "epoch,loss\n";
  for (size_t i = 0; i < curve.size(); ++i)
    out << i << ',' << fmt(curve[i]) << "\n";
}

void write_eval_csvs(const std::string& dir, const EvalReport& report) {
  {
    std::ofstream out(dir + "/rmse.csv", std::ios::binary);
    if (!out) throw InputError("cannot write file: " + dir + "/rmse.csv");
    out << "horizon_s,rmse,cv_rmse\n";
    for (size_t i = 0; i < report.horizon_seconds.size(); ++i)
      out << fmt(report.horizon_seconds[i]) << ',' << fmt(report.rmse[i]) << ','
          << fmt(report.cv_rmse[i]) << "\n";
  }
  {
    std::ofstream out(dir + "/mde_iou.csv", std::ios::binary);
    if (!out) throw InputError("cannot write file: " + dir + "/mde_iou.csv");
    out << "bin_lo,bin_hi,count,mde,iou\n";
    for (const auto& b : report.mde_iou)
      out << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.count << ',' << fmt(b.mde)
          << ',' << fmt(b.iou) << "\n";
  }
}

json eval_report_to_json(const EvalReport& report) {
  json j;
  j["horizon_seconds"] = report.horizon_seconds;
  j["rmse"] = report.rmse;
  j["cv_rmse"] = report.cv_rmse;
  j["n_windows"] = report.n_windows;
  json bins = json::array();
  for (const auto& b : report.mde_iou)
    bins.push_back(json{{"lo", b.lo},
                        {"hi", b.hi},
                        {"count", b.count},
                        {"mde", b.mde},
                        {"iou", b.iou}});
  j["mde_iou"] = std::move(bins);
  return j;
}

// ---- ground truth -----------------------------------------------------------

json truth_to_json(const GeneratedData& data) {
  json j;
  j["name"] = data.scenario.name;
  j["dt"] = data.scenario.dt;
  CameraSpec c;
  c.K = data.scenario.camera;
  c.width = data.scenario.image_width;
  c.height = data.scenario.image_height;
  j["camera"] = camera_to_json(c);
  json frames = json::array();
  for (const auto& ft : data.frames) {
    json fj;
    fj["frame"] = ft.frame;
    json vehicles = json::array();
    for (const auto& vt : ft.vehicles) {
      vehicles.push_back(json{{"id", vt.id},
                              {"ground", vec2_json(vt.ground)},
                              {"vel", vec2_json(vt.vel)},
                              {"t", vec3_json(vt.cam_box.translation)},
                              {"dims", vec3_json(vt.cam_box.dims)},
                              {"yaw", vt.cam_box.yaw}});
    }
    fj["vehicles"] = std::move(vehicles);
    frames.push_back(std::move(fj));
  }
  j["frames"] = std::move(frames);
  return j;
}

TruthData truth_from_json(const json& j) {
  TruthData t;
  t.name = j.value("name", std::string());
  t.dt = j.value("dt", 0.5);
  if (j.contains("camera")) t.camera = camera_from_json(j["camera"]);
  if (!j.contains("frames") || !j["frames"].is_array())
    throw InputError("truth JSON: missing 'frames' array");
  for (const auto& fj : j["frames"]) {
    FrameTruth ft;
    ft.frame = fj.value("frame", 0);
    for (const auto& vj : fj["vehicles"]) {
      VehicleTruth vt;
      vt.id = vj.value("id", 0);
      vt.ground = json_vec2(vj["ground"], "truth ground");
      vt.vel = json_vec2(vj["vel"], "truth vel");
      vt.cam_box.translation = json_vec3(vj["t"], "truth t");
      vt.cam_box.dims = json_vec3(vj["dims"], "truth dims");
      vt.cam_box.yaw = vj.value("yaw", 0.0);
      ft.vehicles.push_back(vt);
    }
    t.frames.push_back(std::move(ft));
  }
  return t;
}

// ---- manifest ---------------------------------------------------------------

void write_manifest(const std::string& dir, const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["config_hashes"] = m.config_hashes;
  j["seed"] = m.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["version"] = m.version;
  j["timings_ms"] = m.timings_ms;
  write_text_file(dir + "/manifest.json", j.dump(2) + "\n");
}

}  // namespace tpnet
