#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "tpnet/io.hpp"

namespace fs = std::filesystem;

namespace {

#ifndef TPNET_BIN
#error "TPNET_BIN must point at the tpnet executable"
#endif

struct CliResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

fs::path work_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "tpnet_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

CliResult run_cli(const std::string& args) {
  const fs::path log = work_root() / "last_output.txt";
  const std::string cmd =
      std::string(TPNET_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  int n = -1;  // skip header
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("help exits 0 and documents the output columns") {
  CHECK(run_cli("--help").code == 0);
  const CliResult gen = run_cli("gen --help");
  CHECK(gen.code == 0);
  CHECK(gen.output.find("xmin") != std::string::npos);
  CHECK(gen.output.find("theta_local") != std::string::npos);
  const CliResult solve = run_cli("solve-pose --help");
  CHECK(solve.code == 0);
  CHECK(solve.output.find("residual_px") != std::string::npos);
  const CliResult predict = run_cli("predict --help");
  CHECK(predict.code == 0);
  CHECK(predict.output.find("window_id,track_id,step,x,y") != std::string::npos);
}

TEST_CASE("unknown subcommands and missing required options exit 2") {
  CHECK(run_cli("frobnicate").code == 2);
  CHECK(run_cli("gen").code == 2);
  CHECK(run_cli("gen --scenario platoon-3").code == 2);  // --out missing
}

TEST_CASE("gen on platoon-3 produces 3 tracks and the full file set") {
  const fs::path out = work_root() / "gen3";
  const CliResult r =
      run_cli("gen --scenario platoon-3 --seed 7 --out " + out.string());
  REQUIRE(r.code == 0);
  for (const char* f : {"detections.csv", "patches.csv", "trajectory.csv",
                        "truth.json", "scenario.json", "camera.json",
                        "manifest.json"})
    CHECK(fs::exists(out / f));

  std::set<int> ids;
  std::ifstream in(out / "trajectory.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "frame,track_id,x,y");
  while (std::getline(in, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    ids.insert(std::stoi(line.substr(c1 + 1, c2 - c1 - 1)));
  }
  CHECK(ids == std::set<int>{0, 1, 2});

  // exactly one manifest, carrying the command, seed, and version
  int manifests = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename() == "manifest.json") ++manifests;
  CHECK(manifests == 1);
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(m.at("version").get<std::string>() == tpnet::kVersion);
  CHECK(m.at("seed").get<std::uint64_t>() == 7);
  CHECK(m.at("command").get<std::string>().find("platoon-3") != std::string::npos);
}

TEST_CASE("gen is byte-deterministic per seed and sensitive to the seed") {
  const fs::path a = work_root() / "det_a", b = work_root() / "det_b",
                 c = work_root() / "det_c";
  REQUIRE(run_cli("gen --scenario cut-in --seed 5 --sigma-px 0.5 --out " + a.string()).code == 0);
  REQUIRE(run_cli("gen --scenario cut-in --seed 5 --sigma-px 0.5 --out " + b.string()).code == 0);
  REQUIRE(run_cli("gen --scenario cut-in --seed 6 --sigma-px 0.5 --out " + c.string()).code == 0);
  for (const char* f : {"detections.csv", "patches.csv", "trajectory.csv"}) {
    CHECK(slurp(a / f) == slurp(b / f));
    CHECK(slurp(a / f) != slurp(c / f));
  }
}

TEST_CASE("missing and malformed inputs exit 2 naming the problem") {
  const CliResult missing =
      run_cli("gen --scenario nosuch.json --out " + (work_root() / "x").string());
  CHECK(missing.code == 2);
  CHECK(missing.output.find("nosuch.json") != std::string::npos);

  const fs::path bad = work_root() / "bad.json";
  std::ofstream(bad) << "{\"vehicles\": [\n";
  const CliResult parse =
      run_cli("gen --scenario " + bad.string() + " --out " + (work_root() / "x").string());
  CHECK(parse.code == 2);
  CHECK(parse.output.find("line") != std::string::npos);
  CHECK(parse.output.find("column") != std::string::npos);
}

TEST_CASE("solve-pose: noise-free oracle residuals below 1e-6, all rows ok") {
  const fs::path data = work_root() / "gen3";  // from the platoon-3 case
  REQUIRE(fs::exists(data / "detections.csv"));
  const fs::path out = work_root() / "solved.csv";
  const CliResult r = run_cli("solve-pose --camera " + (data / "camera.json").string() +
                              " --detections " + (data / "detections.csv").string() +
                              " --out " + out.string());
  REQUIRE(r.code == 0);
  const auto rows = tpnet::read_solved_csv(out.string());
  CHECK(rows.size() == 75);
  for (const auto& row : rows) {
    CHECK(row.ok);
    CHECK(row.residual_px < 1e-6);
    CHECK(row.config_index >= 0);
  }
  CHECK(fs::exists(work_root() / "manifest.json"));  // parent dir of --out
}

TEST_CASE("solve-pose flags truncated boxes but keeps the row count") {
  const fs::path data = work_root() / "gen3";
  const fs::path trunc = work_root() / "trunc.csv";
  {
    std::ifstream in(data / "detections.csv");
    std::ofstream outf(trunc);
    std::string line;
    std::getline(in, line);
    outf << line << "\n";
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        // clamp xmin to the image edge
        const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        const auto c3 = line.find(',', c2 + 1);
        line = line.substr(0, c2 + 1) + "0" + line.substr(c3);
        first = false;
      }
      outf << line << "\n";
    }
  }
  const fs::path out = work_root() / "trunc_solved.csv";
  const CliResult r = run_cli("solve-pose --camera " + (data / "camera.json").string() +
                              " --detections " + trunc.string() + " --out " + out.string());
  REQUIRE(r.code == 0);
  const auto rows = tpnet::read_solved_csv(out.string());
  REQUIRE(rows.size() == 75);
  CHECK_FALSE(rows[0].ok);
  CHECK(rows[0].config_index == -1);
  CHECK(std::isnan(rows[0].residual_px));
  for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].ok);
}

TEST_CASE("train -> eval -> predict round trip with recovered trajectories") {
  const fs::path root = work_root();
  const fs::path data = root / "pipe_data";
  REQUIRE(run_cli("gen --scenario cut-in --seed 3 --out " + data.string()).code == 0);
  const fs::path rec = root / "pipe_rec";
  REQUIRE(run_cli("solve-pose --camera " + (data / "camera.json").string() +
                  " --detections " + (data / "detections.csv").string() +
                  " --out " + (rec / "solved.csv").string() +
                  " --trajectory-out " + (rec / "trajectory.csv").string())
              .code == 0);

  const fs::path cfg = root / "pipe_cfg.json";
  std::ofstream(cfg) << "{\"train\": {\"epochs\": 3, \"learning_rate\": 0.003, "
                        "\"batch_size\": 8, \"seed\": 11}}";
  const fs::path model = root / "pipe_model";
  const CliResult tr = run_cli("train --data " + rec.string() + " --config " +
                               cfg.string() + " --out " + model.string());
  REQUIRE(tr.code == 0);
  for (const char* f : {"weights.json", "loss.csv", "config.json", "scale.json",
                        "manifest.json"})
    CHECK(fs::exists(model / f));
  CHECK(count_rows(model / "loss.csv") == 3);

  const fs::path ev = root / "pipe_eval";
  const CliResult er = run_cli("eval --model " + model.string() + " --data " +
                               data.string() + " --out " + ev.string());
  REQUIRE(er.code == 0);
  CHECK(count_rows(ev / "rmse.csv") == 5);
  CHECK(count_rows(ev / "mde_iou.csv") >= 1);
  const auto rep = nlohmann::json::parse(slurp(ev / "eval_report.json"));
  CHECK(rep.at("n_windows").get<int>() > 0);

  // predict on a hand-written window JSON
  const fs::path win = root / "win.json";
  {
    nlohmann::json j;
    j["window_id"] = 4;
    j["dt"] = 0.5;
    nlohmann::json past = nlohmann::json::array();
    for (int t = 0; t < 6; ++t) past.push_back({0.0, 8.0 + 6.5 * t});
    j["vehicles"] = {{{"id", 9}, {"past", past}}};
    std::ofstream(win) << j.dump();
  }
  const fs::path pred = root / "pred.csv";
  REQUIRE(run_cli("predict --model " + model.string() + " --window " +
                  win.string() + " --out " + pred.string())
              .code == 0);
  const auto rows = tpnet::read_predictions_csv(pred.string());
  REQUIRE(rows.size() == 10);
  for (int s = 0; s < 10; ++s) {
    CHECK(rows[static_cast<size_t>(s)].window_id == 4);
    CHECK(rows[static_cast<size_t>(s)].id == 9);
    CHECK(rows[static_cast<size_t>(s)].step == s);
  }
  // 13 m/s forward motion continues in roughly the same direction
  CHECK(rows.back().pos.y() > rows.front().pos.y());
}

TEST_CASE("predict rejects malformed window JSON with exit 2") {
  const fs::path model = work_root() / "pipe_model";
  REQUIRE(fs::exists(model / "weights.json"));
  const fs::path win = work_root() / "badwin.json";
  std::ofstream(win) << "{\"window_id\": 0, \"vehicles\": [{\"id\": 1, "
                        "\"past\": [[0, 1]]}]}";  // too few past entries
  const CliResult r = run_cli("predict --model " + model.string() + " --window " +
                              win.string() + " --out " +
                              (work_root() / "badpred.csv").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("past") != std::string::npos);
}

TEST_CASE("eval reports an explicit shape diff for mismatched weights") {
  const fs::path model = work_root() / "pipe_model";
  const fs::path broken = work_root() / "broken_model";
  fs::remove_all(broken);
  fs::copy(model, broken, fs::copy_options::recursive);
  auto w = nlohmann::json::parse(slurp(broken / "weights.json"));
  auto& t = w.at("embed.w");
  t["data"].erase(t["data"].size() - 1);
  t["shape"] = {t["shape"][0].get<int>(), t["shape"][1].get<int>() - 1};
  // keep element count consistent with the edited shape
  while (t["data"].size() >
         static_cast<size_t>(t["shape"][0].get<int>() * t["shape"][1].get<int>()))
    t["data"].erase(t["data"].size() - 1);
  std::ofstream(broken / "weights.json") << w.dump();

  const CliResult r = run_cli("eval --model " + broken.string() + " --data " +
                              (work_root() / "pipe_data").string() + " --out " +
                              (work_root() / "broken_eval").string());
  CHECK(r.code == 1);
  CHECK(r.output.find("embed.w") != std::string::npos);
  CHECK(r.output.find("shape mismatch") != std::string::npos);
  CHECK(r.output.find("want") != std::string::npos);
}

TEST_CASE("ablate writes the four-variant table") {
  const fs::path root = work_root();
  const fs::path cfg = root / "ab_cfg.json";
  std::ofstream(cfg) << "{\"train\": {\"epochs\": 2, \"learning_rate\": 0.003, "
                        "\"batch_size\": 8, \"seed\": 11}}";
  const fs::path out = root / "ab_out";
  const CliResult r = run_cli("ablate --data " + (root / "pipe_rec").string() +
                              " --gt-data " + (root / "pipe_data").string() +
                              " --config " + cfg.string() + " --out " + out.string());
  REQUIRE(r.code == 0);
  std::ifstream in(out / "ablation.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "variant,rmse@1s,rmse@2s,rmse@3s,rmse@4s,rmse@5s");
  std::vector<std::string> variants;
  while (std::getline(in, line))
    if (!line.empty()) variants.push_back(line.substr(0, line.find(',')));
  CHECK(variants == std::vector<std::string>{"tp", "est", "dst", "control"});
  const auto j = nlohmann::json::parse(slurp(out / "ablation.json"));
  CHECK(j.size() == 4);
  CHECK(r.output.find("variant,rmse@1s") != std::string::npos);
}

TEST_CASE("train is byte-deterministic for a fixed seed") {
  const fs::path root = work_root();
  const fs::path cfg = root / "pipe_cfg.json";
  const fs::path m2 = root / "pipe_model2";
  REQUIRE(run_cli("train --data " + (root / "pipe_rec").string() + " --config " +
                  cfg.string() + " --out " + m2.string())
              .code == 0);
  CHECK(slurp(root / "pipe_model" / "weights.json") == slurp(m2 / "weights.json"));
  CHECK(slurp(root / "pipe_model" / "loss.csv") == slurp(m2 / "loss.csv"));
}
