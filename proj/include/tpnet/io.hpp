#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpnet/geometry.hpp"
#include "tpnet/pose.hpp"
#include "tpnet/synth.hpp"
#include "tpnet/tracks.hpp"
#include "tpnet/training.hpp"

namespace tpnet {

inline constexpr const char* kVersion = "tpnet-0.1.0";

// Parses a JSON file; parse failures become InputError with the file name
// plus line/column, missing files InputError naming the path.
nlohmann::json parse_json_file(const std::string& path);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// FNV-1a over the file bytes, hex-encoded; used in manifests.
std::string file_hash_hex(const std::string& path);

// ---- camera -----------------------------------------------------------------

struct CameraSpec {
  CameraIntrinsics K{1000.0, 1000.0, 960.0, 540.0};
  int width = 1920;
  int height = 1080;
};

CameraSpec camera_from_json(const nlohmann::json& j);
nlohmann::json camera_to_json(const CameraSpec& c);

// ---- scenario ---------------------------------------------------------------

Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);

// ---- model / training configs ----------------------------------------------

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);
ScaleSpec scale_from_json(const nlohmann::json& j);
nlohmann::json scale_to_json(const ScaleSpec& s);

// ---- CSV records ------------------------------------------------------------

// Columns: frame,track_id,xmin,ymin,xmax,ymax,dx,dy,dz,theta_local
struct DetectionRecord {
  int frame = 0;
  int id = 0;
  Box2D box;
  Vec3 dims = Vec3::Zero();
  double theta_local = 0.0;
};

// Columns: frame,track_id,p0..p255,aspect,area_frac,center_offset
struct PatchRecord {
  int frame = 0;
  int id = 0;
  PatchFeatures patch;
};

// Columns: frame,track_id,ok,tx,ty,tz,config,residual_px
struct SolvedPoseRecord {
  int frame = 0;
  int id = 0;
  bool ok = false;
  Vec3 translation = Vec3::Zero();
  int config_index = -1;
  double residual_px = 0.0;
};

// Columns: window_id,track_id,step,x,y
struct PredictionRecord {
  int window_id = 0;
  int id = 0;
  int step = 0;
  Pos2 pos = Pos2::Zero();
};

void write_detections_csv(const std::string& path,
                          const std::vector<DetectionRecord>& rows);
std::vector<DetectionRecord> read_detections_csv(const std::string& path);

void write_patches_csv(const std::string& path, const std::vector<PatchRecord>& rows);
std::vector<PatchRecord> read_patches_csv(const std::string& path);

// Columns: frame,track_id,x,y
void write_trajectory_csv(const std::string& path, const std::vector<Observation>& rows);
std::vector<Observation> read_trajectory_csv(const std::string& path);

void write_solved_csv(const std::string& path, const std::vector<SolvedPoseRecord>& rows);
std::vector<SolvedPoseRecord> read_solved_csv(const std::string& path);

void write_predictions_csv(const std::string& path,
                           const std::vector<PredictionRecord>& rows);
std::vector<PredictionRecord> read_predictions_csv(const std::string& path);

// Columns: epoch,loss
void write_loss_csv(const std::string& path, const std::vector<double>& curve);

// rmse.csv (horizon_s,rmse,cv_rmse) and mde_iou.csv (bin_lo,bin_hi,count,mde,iou)
void write_eval_csvs(const std::string& dir, const EvalReport& report);
nlohmann::json eval_report_to_json(const EvalReport& report);

// ---- ground truth -----------------------------------------------------------

struct TruthData {
  std::string name;
  double dt = 0.5;
  CameraSpec camera;
  std::vector<FrameTruth> frames;
};

nlohmann::json truth_to_json(const GeneratedData& data);
TruthData truth_from_json(const nlohmann::json& j);

// ---- run manifest -----------------------------------------------------------

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config_hashes;  // label -> hex
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string version = kVersion;
  std::map<std::string, double> timings_ms;
};

void write_manifest(const std::string& dir, const RunManifest& m);

}  // namespace tpnet
