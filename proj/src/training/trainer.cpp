#include "deltar/training/trainer.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "deltar/nn/checkpoint.hpp"

namespace deltar::training {

namespace fs = std::filesystem;
using nn::Tensor;

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be positive");
  if (steps < 1) throw InvalidArgument("TrainConfig: steps must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("TrainConfig: bad learning rate");
  if (eval_every < 0) throw InvalidArgument("TrainConfig: eval_every must be non-negative");
  if (val_count < 0) throw InvalidArgument("TrainConfig: val_count must be non-negative");
  fusion.validate();
  loss.validate();
}

json to_json(const TrainConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["steps"] = cfg.steps;
  j["lr"] = cfg.lr;
  j["cosine_decay"] = cfg.cosine_decay;
  j["seed"] = cfg.seed;
  j["eval_every"] = cfg.eval_every;
  j["val_count"] = cfg.val_count;
  j["fusion"] = nn::to_json(cfg.fusion);
  j["loss"] = to_json(cfg.loss);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  try {
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.steps = j.at("steps").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.cosine_decay = j.at("cosine_decay").get<bool>();
    cfg.seed = j.at("seed").get<std::uint32_t>();
    cfg.eval_every = j.at("eval_every").get<int>();
    cfg.val_count = j.at("val_count").get<int>();
    cfg.fusion = nn::fusion_config_from_json(j.at("fusion"));
    cfg.loss = loss_config_from_json(j.at("loss"));
  } catch (const json::exception& e) {
    throw DataError(std::string("TrainConfig: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ModelInput prepare_input(const LoadedScene& scene, const nn::FusionConfig& cfg) {
  const int h = scene.height, w = scene.width;
  if (scene.rgb.size() != static_cast<std::size_t>(h) * w * 3)
    throw InvalidArgument("prepare_input: rgb buffer size disagrees with the image size");

  ModelInput in;
  std::vector<double> planar(static_cast<std::size_t>(3) * h * w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        planar[(static_cast<std::size_t>(c) * h + y) * w + x] =
            scene.rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  in.image = Tensor::from_vector({3, h, w}, planar);

  std::vector<Rect> rects;
  for (auto& tok : nn::make_tokens(scene.zones, cfg)) {
    const auto fp = zone_footprint_in_rgb(tok.row, tok.col, scene.k_tof, scene.k_rgb,
                                          scene.rgb_to_tof, tok.mean, scene.zones);
    if (!fp) continue;  // zone projects outside the RGB image
    in.tokens.push_back(std::move(tok));
    rects.push_back(*fp);
  }
  in.corrs = nn::make_correspondences(in.tokens, rects, cfg);
  return in;
}

std::vector<std::optional<Rect>> zone_footprints(const LoadedScene& scene) {
  std::vector<std::optional<Rect>> out(scene.zones.readings.size());
  for (int r = 0; r < scene.zones.rows; ++r) {
    for (int c = 0; c < scene.zones.cols; ++c) {
      const auto& z = scene.zones.at(r, c);
      if (!z.valid) continue;
      out[scene.zones.index(r, c)] = zone_footprint_in_rgb(r, c, scene.k_tof, scene.k_rgb,
                                                           scene.rgb_to_tof, z.mean, scene.zones);
    }
  }
  return out;
}

DepthMap predict_depth(nn::DeltarModel& model, const ModelInput& input) {
  const nn::ModelOutput out = model.forward(input.image, input.tokens, input.corrs);
  const int h = out.depth.dim(1), w = out.depth.dim(2);
  DepthMap map(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      map.set(x, y, static_cast<float>(out.depth.data()(static_cast<Eigen::Index>(y) * w + x)));
  return map;
}

namespace {

std::string nonfinite_diagnostics(int step,
                                  const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ostringstream os;
  os << "train: non-finite loss at step " << step << "; parameter norms:";
  for (const auto& [name, t] : params) os << ' ' << name << '=' << t.data().norm();
  return os.str();
}

eval::MetricReport mean_metrics(nn::DeltarModel& model, const std::vector<LoadedScene>& scenes,
                                const std::vector<ModelInput>& inputs, std::size_t begin,
                                std::size_t end) {
  eval::MetricReport acc;
  for (std::size_t i = begin; i < end; ++i) {
    const DepthMap pred = predict_depth(model, inputs[i]);
    const eval::MetricReport r = eval::compute_metrics(pred, scenes[i].depth_rgb);
    acc.delta1 += r.delta1;
    acc.delta2 += r.delta2;
    acc.delta3 += r.delta3;
    acc.rel += r.rel;
    acc.rmse += r.rmse;
    acc.log10 += r.log10;
    acc.pixel_count += r.pixel_count;
  }
  const double inv = 1.0 / static_cast<double>(end - begin);
  acc.delta1 *= inv;
  acc.delta2 *= inv;
  acc.delta3 *= inv;
  acc.rel *= inv;
  acc.rmse *= inv;
  acc.log10 *= inv;
  return acc;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<LoadedScene>& scenes,
                  const fs::path& checkpoint_path, const fs::path& metrics_path) {
  cfg.validate();
  if (scenes.empty()) throw InvalidArgument("train: empty dataset");
  if (cfg.val_count >= static_cast<int>(scenes.size()))
    throw InvalidArgument("train: validation split leaves no training scenes");
  const std::size_t n_train = scenes.size() - static_cast<std::size_t>(cfg.val_count);
  const std::size_t eval_begin = cfg.val_count > 0 ? n_train : 0;
  const std::size_t eval_end = cfg.val_count > 0 ? scenes.size() : n_train;

  std::vector<ModelInput> inputs;
  inputs.reserve(scenes.size());
  for (const auto& s : scenes) inputs.push_back(prepare_input(s, cfg.fusion));

  nn::DeltarModel model(cfg.fusion, cfg.seed);
  auto& params = model.params().items();
  std::vector<Eigen::VectorXd> m(params.size()), v(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = Eigen::VectorXd::Zero(params[i].second.numel());
    v[i] = Eigen::VectorXd::Zero(params[i].second.numel());
  }

  std::ofstream mlog;
  if (!metrics_path.empty()) {
    mlog.open(metrics_path);
    if (!mlog) throw DataError("train: cannot write metric log: " + metrics_path.string());
  }

  std::mt19937 rng(cfg.seed);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  TrainResult res;
  for (int step = 1; step <= cfg.steps; ++step) {
    const double lr = cfg.cosine_decay
                          ? cfg.lr * 0.5 * (1.0 + std::cos(M_PI * (step - 1) / cfg.steps))
                          : cfg.lr;

    Tensor total;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = rng() % n_train;
      const nn::ModelOutput out =
          model.forward(inputs[idx].image, inputs[idx].tokens, inputs[idx].corrs);
      const Tensor l = si_loss(out.depth, scenes[idx].depth_rgb, cfg.loss);
      total = b == 0 ? l : nn::add(total, l);
    }
    if (cfg.batch_size > 1) total = nn::mul_scalar(total, 1.0 / cfg.batch_size);

    const double loss_val = total.data()(0);
    if (!std::isfinite(loss_val)) throw ConvergenceFailure(nonfinite_diagnostics(step, params));
    if (step == 1) res.first_loss = loss_val;
    res.final_loss = loss_val;

    nn::backward(total);
    b1t *= kBeta1;
    b2t *= kBeta2;
    for (std::size_t i = 0; i < params.size(); ++i) {
      nn::Node& node = *params[i].second.node();
      if (node.grad.size() == 0) continue;  // parameter unused under these toggles
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * node.grad;
      v[i].array() = kBeta2 * v[i].array() + (1.0 - kBeta2) * node.grad.array().square();
      node.data.array() -=
          lr * (m[i].array() / (1.0 - b1t)) / ((v[i].array() / (1.0 - b2t)).sqrt() + kEps);
      node.grad.setZero();
    }

    if ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps) {
      res.val = mean_metrics(model, scenes, inputs, eval_begin, eval_end);
      if (mlog.is_open()) {
        json j;
        j["step"] = step;
        j["loss"] = loss_val;
        j["rmse"] = res.val.rmse;
        j["rel"] = res.val.rel;
        j["d1"] = res.val.delta1;
        mlog << j.dump() << '\n';
      }
    }
  }

  if (!checkpoint_path.empty()) nn::save_checkpoint(checkpoint_path, model);
  return res;
}

TrainConfig make_ablation_config(const std::string& name, const TrainConfig& base) {
  TrainConfig cfg = base;
  nn::FusionConfig& f = cfg.fusion;
  if (name == "full") {
    // reference configuration, unchanged
  } else if (name == "mean-var-pointnet") {
    f.token_input = nn::TokenInput::mean_var;
  } else if (name == "five-channel") {
    f.input_channels = 5;
  } else if (name == "feature-concat") {
    f.fusion_mode = nn::FusionMode::feature_concat;
  } else if (name == "no-patch-dist-corr") {
    f.toggles.patch_dist_corr = false;
  } else if (name == "no-img-self-attn") {
    f.toggles.img_self_attn = false;
  } else if (name == "no-img-dist-attn") {
    f.toggles.img_dist_attn = false;
  } else if (name == "uniform-sampling") {
    f.toggles.prob_sampling = false;
  } else if (name == "no-refine") {
    f.toggles.refine = false;
  } else {
    throw InvalidArgument("make_ablation_config: unknown variant: " + name);
  }
  return cfg;
}

}  // namespace deltar::training
