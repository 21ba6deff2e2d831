#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltar/eval/metrics.hpp"
#include "deltar/nn/model.hpp"
#include "deltar/training/dataset.hpp"
#include "deltar/training/loss.hpp"

namespace deltar::training {

struct TrainConfig {
  int batch_size = 2;
  int steps = 2000;
  double lr = 3e-4;  // peak; zero keeps parameters frozen
  bool cosine_decay = true;
  std::uint32_t seed = 1;
  int eval_every = 250;  // 0 = evaluate only after the final step
  int val_count = 0;     // trailing scenes held out for validation
  nn::FusionConfig fusion;
  LossConfig loss;

  void validate() const;
};

json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

/// One scene converted to network inputs: planar image tensor, one token per
/// valid zone whose footprint lands in the image, and the per-level patch
/// rects for those tokens.
struct ModelInput {
  nn::Tensor image;  // [3, H, W]
  std::vector<nn::DistributionToken> tokens;
  std::vector<nn::PatchCorrespondence> corrs;
};

ModelInput prepare_input(const LoadedScene& scene, const nn::FusionConfig& cfg);

/// Per-zone RGB footprints (row-major, nullopt for invalid zones or zones
/// projecting outside the image), using each zone's mean depth as the
/// projection hint.
std::vector<std::optional<Rect>> zone_footprints(const LoadedScene& scene);

/// Runs the model and densifies the predicted depth into a DepthMap.
DepthMap predict_depth(nn::DeltarModel& model, const ModelInput& input);

struct TrainResult {
  double first_loss = 0.0;
  double final_loss = 0.0;
  eval::MetricReport val;  // over the held-out scenes (train set when none)
};

/// Adam updates with optional cosine learning-rate decay, minimizing the
/// scale-invariant loss over random batches. Deterministic for a fixed
/// config. Writes a checkpoint and/or a JSON-lines metric log
/// ({step, loss, rmse, rel, d1}) when the paths are non-empty. Throws
/// ConvergenceFailure with step and parameter norms when the loss leaves
/// the finite range.
TrainResult train(const TrainConfig& cfg, const std::vector<LoadedScene>& scenes,
                  const std::filesystem::path& checkpoint_path = {},
                  const std::filesystem::path& metrics_path = {});

/// Named single-switch variants of a base config:
/// full, mean-var-pointnet, five-channel, feature-concat, no-patch-dist-corr,
/// no-img-self-attn, no-img-dist-attn, uniform-sampling, no-refine.
/// Throws InvalidArgument for any other name.
TrainConfig make_ablation_config(const std::string& name, const TrainConfig& base);

}  // namespace deltar::training
