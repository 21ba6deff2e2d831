#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "deltar/cli.hpp"
#include "deltar/io.hpp"
#include "deltar/nn/checkpoint.hpp"
#include "deltar/sensor_sim.hpp"
#include "deltar/training/trainer.hpp"

using namespace deltar;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("deltar");
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* co = std::cout.rdbuf(out.rdbuf());
  auto* ce = std::cerr.rdbuf(err.rdbuf());
  CliResult r;
  r.code = cli_main(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(co);
  std::cerr.rdbuf(ce);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path temp_dir(const std::string& tag) {
  const auto stamp =
      std::chrono::steady_clock::now().time_since_epoch().count();
  fs::path p = fs::temp_directory_path() / ("deltar_cli_" + tag + "_" + std::to_string(stamp));
  fs::create_directories(p);
  return p;
}

training::TrainConfig tiny_config() {
  training::TrainConfig cfg;
  cfg.fusion.strides = {2, 4};
  cfg.fusion.dims = {8, 12};
  cfg.fusion.heads = 2;
  cfg.fusion.n_bins = 6;
  cfg.fusion.n_samples = 4;
  cfg.fusion.patch_size_coarse = 1;
  cfg.batch_size = 1;
  cfg.steps = 3;
  cfg.eval_every = 0;
  cfg.val_count = 1;
  cfg.seed = 9;
  return cfg;
}

double plane_ray_depth(double px, double py, const CameraIntrinsics& k, const Plane& pl) {
  const Vector3d dir((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
  return -pl.offset / pl.normal.dot(dir);
}

}  // namespace

TEST_CASE("usage errors exit with 1 and help with 0") {
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({"eval", "--pred", "a.dmap", "--gt", "b.dmap", "--bogus-flag"}).code == 1);
  CHECK(run_cli({"eval", "--pred", "a.dmap"}).code == 1);  // --gt missing
  const CliResult help = run_cli({"--help"});
  CHECK(help.out.find("1.25^i") != std::string::npos);  // metric definitions documented
}

TEST_CASE("missing inputs exit with 2 and name the path") {
  const CliResult r = run_cli({"eval", "--pred", "/nonexistent/p.dmap", "--gt", "/nonexistent/g.dmap"});
  CHECK(r.code == 2);
  CHECK(r.err.find("/nonexistent/p.dmap") != std::string::npos);

  const CliResult t = run_cli({"train", "--config", "/nonexistent/c.json", "--data", "x"});
  CHECK(t.code == 2);
  CHECK(t.err.find("/nonexistent/c.json") != std::string::npos);
}

TEST_CASE("eval of a prediction against itself reports zero error") {
  const fs::path dir = temp_dir("eval");
  DepthMap m(6, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) m.set(x, y, 1.0f + 0.1f * static_cast<float>(x + y));
  write_dmap(dir / "d.dmap", m);

  const CliResult r = run_cli({"eval", "--pred", (dir / "d.dmap").string(), "--gt",
                               (dir / "d.dmap").string(), "--out", (dir / "rep.json").string()});
  REQUIRE(r.code == 0);
  const json rep = load_json_file(dir / "rep.json");
  CHECK(rep.at("schema").get<int>() == 1);
  CHECK(rep.at("rmse").get<double>() == 0.0);
  CHECK(rep.at("delta1").get<double>() == 1.0);
  CHECK(json::parse(r.out) == rep);  // stdout carries the same report
  fs::remove_all(dir);
}

TEST_CASE("ablate full emits the input config unchanged") {
  const fs::path dir = temp_dir("ablate");
  const training::TrainConfig base = tiny_config();
  save_json_file(dir / "cfg.json", training::to_json(base));

  const CliResult full = run_cli({"ablate", "--name", "full", "--config",
                                  (dir / "cfg.json").string(), "--out", (dir / "v.json").string()});
  REQUIRE(full.code == 0);
  CHECK(load_json_file(dir / "v.json") == training::to_json(base));

  const CliResult var = run_cli(
      {"ablate", "--name", "no-img-self-attn", "--config", (dir / "cfg.json").string()});
  REQUIRE(var.code == 0);
  CHECK(json::parse(var.out).at("fusion").at("toggles").at("img_self_attn").get<bool>() == false);

  CHECK(run_cli({"ablate", "--name", "nonsense", "--config", (dir / "cfg.json").string()}).code ==
        1);
  fs::remove_all(dir);
}

TEST_CASE("simulate renders a dataset that train consumes end to end") {
  const fs::path dir = temp_dir("pipeline");
  const CliResult sim = run_cli({"simulate", "--out", (dir / "ds").string(), "--count", "2",
                                 "--seed", "21"});
  REQUIRE(sim.code == 0);
  CHECK(json::parse(sim.out).at("scenes").get<int>() == 2);
  CHECK(fs::exists(dir / "ds" / "scene_00000" / "zones.json"));
  CHECK(fs::exists(dir / "ds" / "scene_00001" / "depth_rgb.dmap"));

  save_json_file(dir / "cfg.json", training::to_json(tiny_config()));
  const CliResult tr = run_cli({"train", "--config", (dir / "cfg.json").string(), "--data",
                                (dir / "ds").string(), "--out", (dir / "ck.dltr").string(),
                                "--metrics", (dir / "m.jsonl").string(), "--report",
                                (dir / "train.json").string()});
  REQUIRE(tr.code == 0);
  const json rep = load_json_file(dir / "train.json");
  CHECK(rep.at("first_loss").get<double>() > 0.0);
  CHECK(rep.at("val").at("pixel_count").get<int>() > 0);
  CHECK(fs::file_size(dir / "m.jsonl") > 0);
  // the checkpoint is a loadable model
  const nn::DeltarModel model = nn::load_checkpoint(dir / "ck.dltr");
  CHECK(model.config().n_bins == 6);

  // --seed overrides the config's seed and changes the run
  const CliResult tr2 = run_cli({"train", "--config", (dir / "cfg.json").string(), "--data",
                                 (dir / "ds").string(), "--seed", "77", "--report",
                                 (dir / "train2.json").string()});
  REQUIRE(tr2.code == 0);
  CHECK(load_json_file(dir / "train2.json").at("final_loss").get<double>() !=
        rep.at("final_loss").get<double>());
  fs::remove_all(dir);
}

TEST_CASE("simulate reduces one raster to zone statistics") {
  const fs::path dir = temp_dir("zones");
  write_dmap(dir / "flat.dmap", DepthMap::constant(64, 64, 2.0f));
  const CliResult r = run_cli({"simulate", "--depth", (dir / "flat.dmap").string()});
  REQUIRE(r.code == 0);
  const json rep = json::parse(r.out);
  const ZoneGrid zones = zone_grid_from_json(rep.at("zones"));
  CHECK(zones.valid_count() == 64);
  for (const auto& z : zones.readings) {
    CHECK(z.mean == 2.0);
    CHECK(z.variance == 0.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("plane-bench scores repeated planar captures") {
  const fs::path dir = temp_dir("plane");
  const CameraIntrinsics k = CameraIntrinsics::from_fov(1.0, 0.8, 48, 36);
  const Plane pl(Vector3d(0.1, -0.05, -1.0).normalized(), 0.0);
  const Plane plane(pl.normal, -pl.normal.dot(Vector3d(0, 0, 1.3)));
  for (int f = 0; f < 2; ++f) {
    DepthMap m(k.width, k.height);
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x)
        m.set(x, y, static_cast<float>(plane_ray_depth(x + 0.5, y + 0.5, k, plane)));
    write_dmap(dir / ("f" + std::to_string(f) + ".dmap"), m);
  }
  save_json_file(dir / "k.json", to_json(k));
  save_json_file(dir / "plane.json", to_json(plane));

  const CliResult r = run_cli({"plane-bench", "--pred", (dir / "f0.dmap").string(), "--pred",
                               (dir / "f1.dmap").string(), "--intrinsics",
                               (dir / "k.json").string(), "--region", "2", "2", "46", "34",
                               "--plane", (dir / "plane.json").string(), "--out",
                               (dir / "rep.json").string()});
  REQUIRE(r.code == 0);
  const json rep = load_json_file(dir / "rep.json");
  CHECK(rep.at("bias").get<double>() < 1e-6);
  CHECK(rep.at("jitter").get<double>() < 1e-6);
  CHECK(rep.at("frames").get<int>() == 2);

  // a single frame is a usage-level mistake
  CHECK(run_cli({"plane-bench", "--pred", (dir / "f0.dmap").string(), "--intrinsics",
                 (dir / "k.json").string()})
            .code == 1);
  fs::remove_all(dir);
}

TEST_CASE("calibrate recovers the mounting transform from planar frames") {
  const fs::path dir = temp_dir("calib");
  const ZoneGrid proto;
  const int res = SensorConfig{}.virtual_resolution;
  const CameraIntrinsics k_tof = CameraIntrinsics::from_fov(
      proto.fov_h, proto.fov_v, proto.cols * res, proto.rows * res);
  const Extrinsics truth = Extrinsics::from_axis_angle(
      Vector3d(0.3, 1.0, 0.2).normalized(), 3.0 * M_PI / 180.0, Vector3d(0.03, -0.01, 0.015));
  const Extrinsics tof_to_rgb = truth.inverse();

  const std::vector<Plane> targets = {
      Plane(Vector3d(0.0, 0.0, -1.0), 1.5),
      Plane(Vector3d(0.30, 0.0, -1.0).normalized(), 1.6),
      Plane(Vector3d(0.0, 0.35, -1.0).normalized(), 1.1),
      Plane(Vector3d(-0.25, -0.20, -1.0).normalized(), 1.9),
  };
  json frames = json::array();
  for (const Plane& pl : targets) {
    DepthMap d(k_tof.width, k_tof.height);
    for (int y = 0; y < k_tof.height; ++y)
      for (int x = 0; x < k_tof.width; ++x)
        d.set(x, y, static_cast<float>(plane_ray_depth(x + 0.5, y + 0.5, k_tof, pl)));
    json frame;
    frame["zones"] = to_json(simulate_zone_grid(d, k_tof, SensorConfig{}));
    json pts = json::array();
    for (int gy = 0; gy < 5; ++gy) {
      for (int gx = 0; gx < 5; ++gx) {
        const double px = (gx + 0.5) * k_tof.width / 5.0;
        const double py = (gy + 0.5) * k_tof.height / 5.0;
        const Vector3d p_tof = back_project(px, py, plane_ray_depth(px, py, k_tof, pl), k_tof);
        const Vector3d p_rgb = transform_point(p_tof, tof_to_rgb);
        pts.push_back({p_rgb.x(), p_rgb.y(), p_rgb.z()});
      }
    }
    frame["points"] = pts;
    frames.push_back(frame);
  }
  json root;
  root["schema"] = 1;
  root["frames"] = frames;
  save_json_file(dir / "frames.json", root);

  const CliResult r = run_cli({"calibrate", "--frames", (dir / "frames.json").string(), "--out",
                               (dir / "calib.json").string()});
  REQUIRE(r.code == 0);
  const json rep = load_json_file(dir / "calib.json");
  const Extrinsics solved = extrinsics_from_json(rep.at("extrinsics"));
  CHECK((solved.rotation - truth.rotation).norm() < 1e-3);
  CHECK((solved.translation - truth.translation).norm() < 1e-3);
  // zone means average a curved-in-pixel-space depth field, so the fitted
  // planes sit a few tens of microns from the analytic ones; the solve still
  // has to shrink the misalignment by orders of magnitude
  CHECK(rep.at("mean_distance_after").get<double>() < 2e-4);
  CHECK(rep.at("mean_distance_after").get<double>() <
        rep.at("mean_distance_before").get<double>() / 50.0);
  CHECK(rep.at("frames").size() == 4);
  for (const auto& f : rep.at("frames")) CHECK(f.at("rms_residual").get<double>() < 1e-6);

  // malformed frames file is a data error
  save_json_file(dir / "empty.json", json::object());
  CHECK(run_cli({"calibrate", "--frames", (dir / "empty.json").string()}).code == 2);
  fs::remove_all(dir);
}
