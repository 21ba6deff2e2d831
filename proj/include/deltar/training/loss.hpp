#pragma once

#include <json.hpp>

#include "deltar/geometry.hpp"
#include "deltar/nn/tensor.hpp"

namespace deltar::training {

using nlohmann::json;

/// Weights of the scale-invariant log-depth loss:
/// alpha * sqrt( mean(g^2) - lambda * mean(g)^2 ), g = log(pred) - log(gt),
/// over pixels with valid ground truth. lambda = 1 makes the loss fully
/// invariant to a global scaling of the prediction.
struct LossConfig {
  double lambda = 0.85;
  double alpha = 10.0;

  void validate() const;
};

json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const json& j);

/// Differentiable loss of a dense prediction against a masked ground-truth
/// map. pred must hold one value per gt pixel ([H, W] or [1, H, W]).
/// The radicand's gradient is clamped at 1e-12 so a perfect prediction does
/// not blow up the sqrt derivative; the forward value stays exact.
/// Throws InvalidArgument on shape mismatch or non-positive depths,
/// NoValidPixels when gt has no valid pixel.
nn::Tensor si_loss(const nn::Tensor& pred, const DepthMap& gt, const LossConfig& cfg);

}  // namespace deltar::training
