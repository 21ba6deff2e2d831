#include "deltar/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "deltar/calibration.hpp"
#include "deltar/eval/baseline.hpp"
#include "deltar/eval/metrics.hpp"
#include "deltar/eval/plane_eval.hpp"
#include "deltar/io.hpp"
#include "deltar/nn/checkpoint.hpp"
#include "deltar/training/dataset.hpp"
#include "deltar/training/trainer.hpp"

namespace deltar {

namespace {

namespace fs = std::filesystem;

void emit(const json& report, const std::string& out_path) {
  std::cout << report.dump(2) << "\n";
  if (!out_path.empty()) save_json_file(out_path, report);
}

// ---- simulate ----

struct SimulateOpts {
  std::string out;
  std::string depth;
  int count = 0;
  std::uint32_t seed = 1;
  int width = 0, height = 0;
};

void run_simulate(const SimulateOpts& o) {
  if (!o.depth.empty()) {
    // zone-sensor pass over an existing depth raster
    const DepthMap gt = read_dmap(o.depth);
    const ZoneGrid grid;
    const CameraIntrinsics k_tof =
        CameraIntrinsics::from_fov(grid.fov_h, grid.fov_v, gt.width, gt.height);
    SensorConfig sensor;
    sensor.virtual_resolution = gt.width / sensor.cols;
    json report;
    report["schema"] = 1;
    report["zones"] = to_json(simulate_zone_grid(gt, k_tof, sensor));
    emit(report, o.out);
    return;
  }
  if (o.count < 1)
    throw InvalidArgument("simulate: pass --count to render scenes or --depth for one raster");
  if (o.out.empty()) throw InvalidArgument("simulate: --out directory required");

  training::SceneSpec base = training::SceneSpec::standard(o.seed);
  if (o.width > 0 || o.height > 0) {
    base.width = o.width > 0 ? o.width : base.width;
    base.height = o.height > 0 ? o.height : base.height;
    base.k_rgb = CameraIntrinsics::from_fov(base.k_rgb.fov_h(), base.k_rgb.fov_v(), base.width,
                                            base.height);
  }
  const auto dirs = training::generate_dataset(o.out, base, o.count);
  json report;
  report["schema"] = 1;
  report["scenes"] = dirs.size();
  report["root"] = o.out;
  std::cout << report.dump(2) << "\n";
}

// ---- calibrate ----

struct CalibrateOpts {
  std::string frames;
  std::string tof_intrinsics;
  std::string out;
  int em_max_iter = 50;
  double outlier_threshold = 0.05;
};

void run_calibrate(const CalibrateOpts& o) {
  const json root = load_json_file(o.frames);
  if (!root.contains("frames") || !root["frames"].is_array() || root["frames"].empty())
    throw DataError("calibrate: no \"frames\" array in " + o.frames);

  EmConfig em;
  em.max_iterations = o.em_max_iter;
  em.outlier_threshold = o.outlier_threshold;

  std::vector<CalibrationFrame> frames;
  json per_frame = json::array();
  CameraIntrinsics k_tof;
  bool have_k = false;
  if (!o.tof_intrinsics.empty()) {
    k_tof = intrinsics_from_json(load_json_file(o.tof_intrinsics));
    have_k = true;
  }
  for (const auto& jf : root["frames"]) {
    CalibrationFrame f;
    ZoneGrid zones;
    try {
      zones = zone_grid_from_json(jf.at("zones"));
      for (const auto& jp : jf.at("points")) {
        if (!jp.is_array() || jp.size() != 3)
          throw DataError("calibrate: points must be [x, y, z] triples");
        f.points.emplace_back(jp[0].get<double>(), jp[1].get<double>(), jp[2].get<double>());
      }
    } catch (const json::exception& e) {
      throw DataError("calibrate: bad frame in " + o.frames + ": " + e.what());
    }
    if (!have_k) {
      // default virtual raster: the sensor's native pixel pitch per zone
      const int res = SensorConfig{}.virtual_resolution;
      k_tof = CameraIntrinsics::from_fov(zones.fov_h, zones.fov_v, zones.cols * res,
                                         zones.rows * res);
      have_k = true;
    }
    const PlaneFitResult fit = fit_plane_em(zones, k_tof, em);
    f.plane = fit.plane;
    frames.push_back(std::move(f));
    json pf;
    pf["rms_residual"] = fit.rms_residual;
    pf["iterations"] = fit.iterations;
    pf["plane"] = to_json(fit.plane);
    per_frame.push_back(pf);
  }

  const Extrinsics solved = solve_extrinsics(frames, Extrinsics::identity());
  const CalibrationReport rep = calibration_report(frames, solved);
  json report;
  report["schema"] = 1;
  report["extrinsics"] = to_json(solved);
  report["mean_distance_before"] = rep.mean_distance_before;
  report["mean_distance_after"] = rep.mean_distance_after;
  report["frames"] = per_frame;
  emit(report, o.out);
}

// ---- train ----

struct TrainOpts {
  std::string config;
  std::string data;
  std::string out;
  std::string metrics;
  std::string report;
  std::uint32_t seed = 0;
  bool seed_set = false;
};

void run_train(const TrainOpts& o) {
  training::TrainConfig cfg = training::train_config_from_json(load_json_file(o.config));
  if (o.seed_set) cfg.seed = o.seed;
  const auto scenes = training::load_scenes(training::list_scene_dirs(o.data));
  const training::TrainResult res = training::train(cfg, scenes, o.out, o.metrics);
  json report;
  report["schema"] = 1;
  report["first_loss"] = res.first_loss;
  report["final_loss"] = res.final_loss;
  report["val"] = eval::to_json(res.val);
  if (!o.out.empty()) report["checkpoint"] = o.out;
  emit(report, o.report);
}

// ---- eval ----

struct EvalOpts {
  std::string pred;
  std::string gt;
  std::string out;
};

void run_eval(const EvalOpts& o) {
  const DepthMap pred = read_dmap(o.pred);
  const DepthMap gt = read_dmap(o.gt);
  json report = eval::to_json(eval::compute_metrics(pred, gt));
  report["schema"] = 1;
  emit(report, o.out);
}

// ---- plane-bench ----

struct PlaneBenchOpts {
  std::vector<std::string> preds;
  std::string intrinsics;
  std::string plane;
  std::vector<double> region;
  std::string out;
};

void run_plane_bench(const PlaneBenchOpts& o) {
  std::vector<DepthMap> frames;
  for (const auto& p : o.preds) frames.push_back(read_dmap(p));
  const CameraIntrinsics k = intrinsics_from_json(load_json_file(o.intrinsics));
  Rect region(0.0, 0.0, k.width, k.height);
  if (!o.region.empty()) {
    if (o.region.size() != 4)
      throw InvalidArgument("plane-bench: --region takes x_min y_min x_max y_max");
    region = Rect(o.region[0], o.region[1], o.region[2], o.region[3]);
  }
  std::optional<Plane> reference;
  if (!o.plane.empty()) reference = plane_from_json(load_json_file(o.plane));
  json report = eval::to_json(eval::plane_bias_jitter(frames, k, region, reference));
  report["schema"] = 1;
  emit(report, o.out);
}

// ---- ablate ----

struct AblateOpts {
  std::string name;
  std::string config;
  std::string out;
};

void run_ablate(const AblateOpts& o) {
  const training::TrainConfig base = training::train_config_from_json(load_json_file(o.config));
  const training::TrainConfig variant = training::make_ablation_config(o.name, base);
  json report = training::to_json(variant);
  emit(report, o.out);
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Zone-sensor depth toolkit: scene simulation, sensor calibration and"
               " fusion-network training/evaluation."};
  app.require_subcommand(1);
  app.footer(
      "Depth metrics: delta_i = fraction of valid pixels with max(pred/gt, gt/pred) < 1.25^i;\n"
      "REL = mean |pred - gt| / gt; RMSE = sqrt(mean (pred - gt)^2);\n"
      "log10 = mean |log10 pred - log10 gt|. Metrics pool pixels with valid ground truth.\n"
      "Plane bench: bias = mean |measured depth - plane depth along the pixel ray|,\n"
      "jitter = standard deviation of the signed error, pooled over frames.");

  SimulateOpts sim;
  auto* c_sim = app.add_subcommand("simulate",
                                   "Render a synthetic scene dataset, or reduce one depth raster "
                                   "to zone statistics (--depth).");
  c_sim->add_option("--out", sim.out, "output directory (dataset) or report path (--depth)");
  c_sim->add_option("--count", sim.count, "number of scenes to render");
  c_sim->add_option("--depth", sim.depth, "depth raster (.dmap) to reduce to zone statistics");
  c_sim->add_option("--seed", sim.seed, "base seed for scene randomization");
  c_sim->add_option("--width", sim.width, "RGB raster width override");
  c_sim->add_option("--height", sim.height, "RGB raster height override");
  c_sim->callback([&] { run_simulate(sim); });

  CalibrateOpts cal;
  auto* c_cal = app.add_subcommand(
      "calibrate", "Solve the RGB-to-sensor extrinsics from planar-target observations.");
  c_cal->add_option("--frames", cal.frames,
                    "JSON with {\"frames\": [{\"zones\": ..., \"points\": [[x,y,z], ...]}, ...]}")
      ->required();
  c_cal->add_option("--tof-intrinsics", cal.tof_intrinsics,
                    "intrinsics JSON for the zone sensor's virtual raster (default: derived "
                    "from the zone grid's field of view)");
  c_cal->add_option("--out", cal.out, "write the calibration report here");
  c_cal->add_option("--em-max-iter", cal.em_max_iter, "plane-fit iteration cap");
  c_cal->add_option("--outlier-thresh", cal.outlier_threshold,
                    "zone rejection threshold, meters");
  c_cal->callback([&] { run_calibrate(cal); });

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "Train the fusion network on a scene dataset.");
  c_tr->add_option("--config", tr.config, "training config JSON")->required();
  c_tr->add_option("--data", tr.data, "dataset root (scene_* directories)")->required();
  c_tr->add_option("--out", tr.out, "checkpoint path to write");
  c_tr->add_option("--metrics", tr.metrics, "JSON-lines metric log path");
  c_tr->add_option("--report", tr.report, "write the final training report here");
  auto* seed_opt = c_tr->add_option("--seed", tr.seed, "override the config's seed");
  c_tr->callback([&] {
    tr.seed_set = seed_opt->count() > 0;
    run_train(tr);
  });

  EvalOpts ev;
  auto* c_ev = app.add_subcommand("eval", "Depth metrics of a prediction against ground truth.");
  c_ev->add_option("--pred", ev.pred, "predicted depth (.dmap)")->required();
  c_ev->add_option("--gt", ev.gt, "ground-truth depth (.dmap)")->required();
  c_ev->add_option("--out", ev.out, "write the metric report here");
  c_ev->callback([&] { run_eval(ev); });

  PlaneBenchOpts pb;
  auto* c_pb = app.add_subcommand(
      "plane-bench", "Bias/jitter of repeated predictions of a static planar target.");
  c_pb->add_option("--pred", pb.preds, "predicted depth (.dmap), repeat per frame")->required();
  c_pb->add_option("--intrinsics", pb.intrinsics, "camera intrinsics JSON")->required();
  c_pb->add_option("--region", pb.region, "evaluation window x_min y_min x_max y_max")
      ->expected(4);
  c_pb->add_option("--plane", pb.plane,
                   "reference plane JSON (default: robust fit to the predictions)");
  c_pb->add_option("--out", pb.out, "write the report here");
  c_pb->callback([&] { run_plane_bench(pb); });

  AblateOpts ab;
  auto* c_ab = app.add_subcommand("ablate", "Derive a named single-switch training variant.");
  c_ab->add_option("--name", ab.name,
                   "full, mean-var-pointnet, five-channel, feature-concat, no-patch-dist-corr, "
                   "no-img-self-attn, no-img-dist-attn, uniform-sampling, no-refine")
      ->required();
  c_ab->add_option("--config", ab.config, "base training config JSON")->required();
  c_ab->add_option("--out", ab.out, "write the variant config here");
  c_ab->callback([&] { run_ablate(ab); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace deltar
